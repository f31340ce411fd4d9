"""
Plain-text model checkpoints.

Layout::

    # recfair-model 1
    spec {"family": ..., "params": {...}, "seed": ...}
    users <n>
    <one id per line>
    items <n>
    <one id per line>
    train <global_mean> <user_seen as 0/1 string> <item_seen as 0/1 string>
    block <name> <dim0> [<dim1>]
    <rows of whitespace-separated floats, repr precision>
    ...
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .base import FittedModel, ModelSpec

MAGIC = "# recfair-model 1"


def save_model(model: FittedModel, path: str | Path) -> None:
    spec = model.spec
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(MAGIC + "\n")
        f.write("class " + type(model).__name__ + "\n")
        f.write("spec " + json.dumps({"family": spec.family, "params": dict(spec.params), "seed": spec.seed}, sort_keys=True) + "\n")
        f.write(f"users {len(model.user_ids)}\n")
        f.writelines(u + "\n" for u in model.user_ids)
        f.write(f"items {len(model.item_ids)}\n")
        f.writelines(i + "\n" for i in model.item_ids)
        seen_u = "".join("1" if s else "0" for s in model.user_seen) or "-"
        seen_i = "".join("1" if s else "0" for s in model.item_seen) or "-"
        f.write(f"train {model.global_mean!r} {model.rating_scale[0]!r} {model.rating_scale[1]!r} {seen_u} {seen_i}\n")
        for name, arr in model.state().items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 1:
                f.write(f"block {name} {arr.shape[0]}\n")
                f.write(" ".join(repr(float(x)) for x in arr) + "\n")
            else:
                f.write(f"block {name} {arr.shape[0]} {arr.shape[1]}\n")
                for row in arr:
                    f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_model(path: str | Path) -> FittedModel:
    from . import MODEL_CLASSES

    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: not a recfair model checkpoint")
    pos = 1
    cls_name = lines[pos].split(" ", 1)[1]
    pos += 1
    sd = json.loads(lines[pos].split(" ", 1)[1])
    pos += 1
    spec = ModelSpec(sd["family"], sd["params"], sd["seed"])
    n_users = int(lines[pos].split()[1])
    users = tuple(lines[pos + 1 : pos + 1 + n_users])
    pos += 1 + n_users
    n_items = int(lines[pos].split()[1])
    items = tuple(lines[pos + 1 : pos + 1 + n_items])
    pos += 1 + n_items
    _, gm, lo, hi, su, si = lines[pos].split(" ")
    pos += 1
    state = {}
    while pos < len(lines) and lines[pos].startswith("block "):
        parts = lines[pos].split()
        name, dims = parts[1], [int(x) for x in parts[2:]]
        pos += 1
        if len(dims) == 1:
            state[name] = np.array([float(x) for x in lines[pos].split()], dtype=np.float64).reshape(dims)
            pos += 1
        else:
            rows = [[float(x) for x in lines[pos + k].split()] for k in range(dims[0])]
            state[name] = np.array(rows, dtype=np.float64).reshape(dims)
            pos += dims[0]
    model = object.__new__(MODEL_CLASSES[cls_name])
    model.spec = spec
    model.user_ids = users
    model.item_ids = items
    model.global_mean = float(gm)
    model.rating_scale = (float(lo), float(hi))
    model.user_seen = np.array([c == "1" for c in su], dtype=bool) if su != "-" else np.zeros(0, bool)
    model.item_seen = np.array([c == "1" for c in si], dtype=bool) if si != "-" else np.zeros(0, bool)
    model.train_reference = "checkpoint"
    model.restore(state)
    return model

from __future__ import annotations

import numpy as np

from ..data import GroupAssignment, InteractionSet


def resample_balanced(
    train: InteractionSet, groups: GroupAssignment, seed: int = 0, balance_by: str = "interactions"
) -> InteractionSet:
    """
    Subsample the larger group, without replacement, so both groups contribute
    equally to training (Ekstrand et al., 2018).

    ``balance_by='interactions'`` equalizes interaction counts exactly;
    ``'users'`` keeps a random subset of the larger group's users of the
    smaller group's size.  The smaller group is left untouched.  Rows of
    unlabeled users are kept.
    """
    labels = groups.label_array(train.user_ids)[train.users]
    rows0 = np.flatnonzero(labels == 0)
    rows1 = np.flatnonzero(labels == 1)
    if len(rows0) == 0 or len(rows1) == 0:
        raise ValueError("both groups need interactions in the training set")
    rng = np.random.default_rng(seed)
    big, small = (rows0, rows1) if len(rows0) >= len(rows1) else (rows1, rows0)
    if balance_by == "interactions":
        keep_big = np.sort(rng.choice(big, size=len(small), replace=False))
    elif balance_by == "users":
        big_users = np.unique(train.users[big])
        n_small = len(np.unique(train.users[small]))
        chosen = rng.choice(big_users, size=min(n_small, len(big_users)), replace=False)
        keep_big = big[np.isin(train.users[big], chosen)]
    else:
        raise ValueError(f"unknown balance_by {balance_by!r}")
    others = np.flatnonzero(labels < 0)
    rows = np.sort(np.concatenate([keep_big, small, others]))
    out = train.take(rows)
    out.validate()
    return out

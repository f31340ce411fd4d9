"""Regenerate the bundled MovieLens-1M-format fixtures under src/recfair/datasets/."""

from __future__ import annotations

import logging
from pathlib import Path

from recfair.synthetic import ml1m_like_sample, ml1m_like_users, write_ml1m_ratings, write_ml1m_users

OUT = Path(__file__).resolve().parents[1] / "src" / "recfair" / "datasets"


def main() -> None:
    logging.basicConfig(level=logging.INFO)
    users = ml1m_like_users(6040, seed=1)
    write_ml1m_users(users, OUT / "ml1m_users.dat")
    sample = dict(list(users.items())[:1000])
    write_ml1m_users(sample, OUT / "ml1m_sample_users.dat")
    ratings = ml1m_like_sample(sample, n_items=600, seed=2)
    write_ml1m_ratings(ratings, OUT / "ml1m_sample_ratings.dat.gz")
    logging.info("%d users, %d items, %d ratings", ratings.n_users, ratings.n_items, len(ratings))


if __name__ == "__main__":
    main()

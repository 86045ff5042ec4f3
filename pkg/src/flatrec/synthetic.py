"""Planted-block interaction generator used by tests, benchmarks and demos."""

from __future__ import annotations

import numpy as np

from .graph import InteractionRecord


def planted_blocks(n_users: int = 1000, n_items: int = 1000, per_user: int = 20,
                   within: float = 0.9, n_blocks: int = 2, zipf: float = 0.8,
                   seed: int = 0) -> list[InteractionRecord]:
    """Users and items split into ``n_blocks`` preference blocks.

    Each user draws ``per_user`` distinct items, a ``within`` fraction from its
    own block. Inside a block, items are drawn with Zipf-like popularity
    ``rank ** -zipf``. Weights are click counts ``1 + Poisson(0.5)``.
    """
    if not 0.0 <= within <= 1.0:
        raise ValueError("within must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    user_block = np.arange(n_users) % n_blocks
    item_block = np.arange(n_items) % n_blocks
    pop = np.empty(n_items)
    for b in range(n_blocks):
        members = np.flatnonzero(item_block == b)
        ranks = rng.permutation(len(members)) + 1
        pop[members] = ranks.astype(float) ** -zipf

    records = []
    for u in range(n_users):
        own = item_block == user_block[u]
        n_in = min(int(round(within * per_user)), int(own.sum()))
        n_out = min(per_user - n_in, int((~own).sum()))
        chosen = []
        for mask, count in ((own, n_in), (~own, n_out)):
            if count == 0:
                continue
            cand = np.flatnonzero(mask)
            p = pop[cand] / pop[cand].sum()
            chosen.extend(rng.choice(cand, size=count, replace=False, p=p).tolist())
        clicks = 1 + rng.poisson(0.5, size=len(chosen))
        for i, c in zip(chosen, clicks):
            records.append(InteractionRecord(f"u{u}", f"i{i}", float(c)))
    return records


def block_of(key: str, n_blocks: int = 2) -> int:
    """Block label of a generated ``u<n>``/``i<n>`` key."""
    return int(key[1:]) % n_blocks

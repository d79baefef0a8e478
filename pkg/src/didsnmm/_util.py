"""Small shared helpers: seeding, deterministic parallel maps, canonical JSON."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def spawn_rngs(seed, n):
    """n independent generators derived from one integer seed (order-stable)."""
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seq.spawn(n)]


def parallel_map(fn, items, threads=1):
    """Map fn over items preserving order.

    Results are identical for any thread count: each item's work depends only
    on the item itself (callers pass per-item seeds), so the executor is pure
    plumbing.
    """
    items = list(items)
    if threads is None:
        threads = 1
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, no whitespace drift)."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False)


def jsonable(x):
    """Recursively convert numpy scalars/arrays to plain Python for json."""
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x

"""Reference tours: exact solvers for small n and a local-search label heuristic.

Exact labels come from brute-force enumeration (n <= 10) or Held-Karp
dynamic programming (n <= 20, memory is the binding constraint: the DP
table holds 2^(n-1) * (n-1) float64 states, ~80 MB at n = 20). Larger
instances get heuristic labels: best-of-n-starts nearest neighbor followed
by alternating 2-opt and Or-opt local search. Heuristic labels are
approximate and carry provenance "heuristic" so downstream gap reports can
say what they were measured against.
"""

from __future__ import annotations

import itertools

import numpy as np

from .decode import IMPROVE_EPS, _distance_matrix, two_opt
from .errors import InvalidInstanceError, SizeLimitError
from .instances import Instance, Tour, make_tour

BRUTE_FORCE_MAX_N = 10
HELD_KARP_MAX_N = 20


def brute_force_opt(inst: Instance) -> Tour:
    """Minimum tour by enumerating all (n-1)!/2 distinct cycles."""
    n = inst.n
    if n > BRUTE_FORCE_MAX_N:
        raise SizeLimitError(f"brute force enumerates up to n = {BRUTE_FORCE_MAX_N}, got {n}")
    if n == 3:
        return make_tour(inst, np.arange(3), "exact")
    d = _distance_matrix(inst.points)
    perms = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    perms = perms[perms[:, 0] < perms[:, -1]]  # drop reversals
    orders = np.concatenate([np.zeros((perms.shape[0], 1), dtype=np.int64), perms], axis=1)
    lengths = d[orders, np.roll(orders, -1, axis=1)].sum(axis=1)
    return make_tour(inst, orders[int(np.argmin(lengths))], "exact")


def held_karp(inst: Instance) -> Tour:
    """Exact minimum tour via bitmask dynamic programming.

    States are (subset of nodes 1..n-1, endpoint); subsets are processed in
    popcount order with the transition vectorized over endpoints. Ties
    between equal-cost states break toward the smaller node index.
    """
    n = inst.n
    if n > HELD_KARP_MAX_N:
        raise SizeLimitError(f"Held-Karp is limited to n <= {HELD_KARP_MAX_N}, got {n}")
    if n == 3:
        return make_tour(inst, np.arange(3), "exact")
    d = _distance_matrix(inst.points)
    m = n - 1  # bits 0..m-1 stand for nodes 1..n-1
    size = 1 << m
    dp = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int8)
    j_all = np.arange(m)
    dp[1 << j_all, j_all] = d[0, 1:]
    masks = np.arange(size, dtype=np.int64)
    popcount = np.bitwise_count(masks).astype(np.int64)
    d_mid = np.ascontiguousarray(d[1:, 1:])
    rows_buf = np.arange(size)
    for c in range(2, m + 1):
        subs = masks[popcount == c]
        for j in range(m):
            bit = 1 << j
            s_j = subs[(subs & bit) != 0]
            if s_j.size == 0:
                continue
            cand = dp[s_j ^ bit] + d_mid[:, j]
            k = np.argmin(cand, axis=1)
            dp[s_j, j] = cand[rows_buf[: s_j.size], k]
            parent[s_j, j] = k.astype(np.int8)
    closing = dp[size - 1] + d[1:, 0]
    j = int(np.argmin(closing))
    path = []
    s = size - 1
    while j >= 0:
        path.append(j + 1)
        j, s = int(parent[s, j]), s ^ (1 << j)
    path.reverse()
    return make_tour(inst, np.concatenate(([0], path)), "exact")


def _nearest_neighbor_best_start(d: np.ndarray) -> np.ndarray:
    """Greedy nearest-neighbor tour from every start node; keep the shortest."""
    n = d.shape[0]
    idx = np.arange(n)
    visited = np.zeros((n, n), dtype=bool)
    visited[idx, idx] = True
    orders = np.empty((n, n), dtype=np.int64)
    orders[:, 0] = idx
    current = idx.copy()
    lengths = np.zeros(n)
    for step in range(1, n):
        cand = np.where(visited, np.inf, d[current])
        nxt = np.argmin(cand, axis=1)
        lengths += cand[idx, nxt]
        orders[:, step] = nxt
        visited[idx, nxt] = True
        current = nxt
    lengths += d[current, idx]
    return orders[int(np.argmin(lengths))]


def _or_opt_pass(d: np.ndarray, order: np.ndarray) -> np.ndarray | None:
    """Best segment relocation (lengths 1-3, both orientations), or None."""
    n = order.shape[0]
    pos = np.arange(n)
    dpos = d[np.ix_(order, order)]
    nxt = (pos + 1) % n
    edge = dpos[pos, nxt]
    dpos_t = dpos.T
    best = (-IMPROVE_EPS, None)
    for seg_len in (1, 2, 3):
        if seg_len > n - 3:
            break
        a = pos
        e = (a + seg_len - 1) % n
        prv = (a - 1) % n
        after = (e + 1) % n
        removal = dpos[prv, after] - edge[prv] - edge[e]
        # offset of insertion edge j from the segment start; edges touching the
        # segment (or the broken prv->a edge) are not available
        off = (pos[None, :] - a[:, None]) % n
        invalid = (off < seg_len) | (off > n - 2)
        base = removal[:, None] - edge[None, :]
        ins_fwd = base + dpos_t + dpos[np.ix_(e, nxt)]
        ins_rev = base + dpos_t[e] + dpos[:, nxt]
        for oriented, deltas in (("fwd", ins_fwd), ("rev", ins_rev)):
            deltas = np.where(invalid, np.inf, deltas)
            flat = int(np.argmin(deltas))
            ai, j = divmod(flat, n)
            if deltas[ai, j] < best[0]:
                best = (deltas[ai, j], (seg_len, ai, j, oriented))
    if best[1] is None:
        return None
    seg_len, a, j, oriented = best[1]
    seg = order[(a + np.arange(seg_len)) % n]
    if oriented == "rev":
        seg = seg[::-1]
    rem_pos = (a + seg_len + np.arange(n - seg_len)) % n
    rem = order[rem_pos]
    insert_at = int(((j - a) % n) - seg_len)  # index of edge start within rem
    return np.concatenate([rem[: insert_at + 1], seg, rem[insert_at + 1 :]])


_LABELERS = {}


def _label_one(task):
    name, points, inst_id, seed = task
    inst = Instance(points, id=inst_id)
    if name == "heuristic":
        tour = heuristic_label(inst, seed=seed)
    else:
        tour = _LABELERS[name](inst)
    return tour.order, tour.length, tour.provenance


def label_dataset(dataset, solver: str = "heldkarp", seed: int = 0, workers: int = 1):
    """Attach reference tours to every record, optionally in parallel.

    Labeling is a pure per-instance function, so results are assigned by
    index and the output is identical for any worker count.
    """
    if solver not in _LABELERS:
        raise ValueError(f"unknown solver {solver!r}")
    tasks = [(solver, rec.instance.points, rec.instance.id, seed) for rec in dataset.records]
    if workers > 1 and len(tasks) > 1:
        from multiprocessing import get_context

        with get_context("fork").Pool(workers) as pool:
            results = pool.map(_label_one, tasks, chunksize=8)
    else:
        results = [_label_one(t) for t in tasks]
    for rec, (order, length, provenance) in zip(dataset.records, results):
        rec.tour = Tour(order=order, length=length, provenance=provenance)
    return dataset


def heuristic_label(inst: Instance, seed: int = 0) -> Tour:
    """Near-optimal label tour: best-of-n nearest neighbor, then alternating
    2-opt and Or-opt until neither improves.

    Deterministic for a fixed seed (the construction itself uses no
    randomness; the seed is part of the signature for future randomized
    variants).
    """
    del seed
    if inst.n < 4:
        raise InvalidInstanceError(f"heuristic labels need n >= 4, got {inst.n}")
    d = _distance_matrix(inst.points)
    tour = make_tour(inst, _nearest_neighbor_best_start(d), "heuristic")
    while True:
        length_before = tour.length
        tour = two_opt(inst, tour, max_passes=10_000)
        order = tour.order
        while True:
            moved = _or_opt_pass(d, order)
            if moved is None:
                break
            order = moved
        tour = make_tour(inst, order, "heuristic")
        if tour.length >= length_before - IMPROVE_EPS:
            return tour


_LABELERS.update(
    {"brute": brute_force_opt, "heldkarp": held_karp, "heuristic": heuristic_label}
)

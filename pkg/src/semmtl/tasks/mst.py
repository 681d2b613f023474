"""Maximum spanning arborescence decoding (Chu-Liu/Edmonds) for dependency trees."""
from __future__ import annotations

import numpy as np

NEG = -np.inf


def _find_cycle(parent: np.ndarray) -> list[int] | None:
    n = len(parent)
    color = np.zeros(n, dtype=np.int8)  # 0 new, 1 on current path, 2 done
    color[0] = 2
    for start in range(1, n):
        if color[start]:
            continue
        path = []
        v = start
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = parent[v]
        if color[v] == 1:
            return path[path.index(v):]
        for u in path:
            color[u] = 2
    return None


def _chu_liu_edmonds(W: np.ndarray) -> np.ndarray:
    """``W[h, d]`` is the weight of arc h -> d; node 0 is the root. Returns the parent array."""
    n = W.shape[0]
    parent = np.argmax(W, axis=0)
    parent[0] = -1
    cycle = _find_cycle(parent)
    if cycle is None:
        return parent
    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    keep = np.flatnonzero(~in_cycle)
    cyc = np.asarray(cycle)
    m = len(keep)
    c = m  # index of the contracted node
    Wc = np.full((m + 1, m + 1), NEG)
    Wc[:m, :m] = W[np.ix_(keep, keep)]
    # entering the cycle at v replaces v's cycle arc
    with np.errstate(invalid="ignore"):
        gain = W[np.ix_(keep, cyc)] - W[parent[cyc], cyc][None, :]
    gain = np.where(np.isnan(gain), NEG, gain)
    enter = cyc[np.argmax(gain, axis=1)]
    Wc[:m, c] = gain.max(axis=1)
    out_w = W[np.ix_(cyc, keep)]
    leave = cyc[np.argmax(out_w, axis=0)]
    Wc[c, :m] = out_w.max(axis=0)
    Wc[:, 0] = NEG
    np.fill_diagonal(Wc, NEG)
    pc = _chu_liu_edmonds(Wc)
    result = parent.copy()
    for k in range(1, m):
        v = keep[k]
        result[v] = leave[k] if pc[k] == c else keep[pc[k]]
    u = keep[pc[c]]
    result[enter[pc[c]]] = u
    result[0] = -1
    return result


def _arc_matrix(scores: np.ndarray) -> np.ndarray:
    n = scores.shape[0]
    W = np.full((n + 1, n + 1), NEG)
    W[:, 1:] = np.asarray(scores, dtype=np.float64).T
    np.fill_diagonal(W, NEG)
    return W


def tree_score(scores: np.ndarray, heads) -> float:
    heads = np.asarray(heads)
    return float(np.sum(scores[np.arange(len(heads)), heads]))


def mst_decode(scores, single_root: bool = True) -> np.ndarray:
    """Heads (0 = ROOT) of the maximum-weight tree for ``scores[i, j]`` = score of token i+1 taking head j.

    With ``single_root`` exactly one token attaches to ROOT: when the
    unconstrained optimum has several root children, each candidate root child
    is tried with the other ROOT arcs removed and the best tree is kept.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != scores.shape[0] + 1:
        raise ValueError(f"mst_decode expects [n, n+1] scores, got {scores.shape}")
    n = scores.shape[0]
    if n == 0:
        raise ValueError("mst_decode: empty sentence")
    if not np.all(np.isfinite(scores)):
        raise ValueError("mst_decode: scores must be finite")
    W = _arc_matrix(scores)
    heads = _chu_liu_edmonds(W)[1:]
    if not single_root or np.count_nonzero(heads == 0) == 1:
        return heads
    best, best_score = None, NEG
    for r in range(1, n + 1):
        Wr = W.copy()
        Wr[0, :] = NEG
        Wr[0, r] = W[0, r]
        cand = _chu_liu_edmonds(Wr)[1:]
        s = tree_score(scores, cand)
        if s > best_score:
            best, best_score = cand, s
    return best


def is_tree(heads, single_root: bool = True) -> bool:
    heads = np.asarray(heads)
    n = len(heads)
    if n == 0 or heads.min() < 0 or heads.max() > n or np.any(heads == np.arange(1, n + 1)):
        return False
    if single_root and np.count_nonzero(heads == 0) != 1:
        return False
    parent = np.concatenate([[-1], heads])
    return _find_cycle(parent) is None


def greedy_decode(scores) -> np.ndarray:
    """Per-token argmax head, ignoring tree constraints (may contain cycles)."""
    s = np.array(scores, dtype=np.float64)
    n = s.shape[0]
    s[np.arange(n), np.arange(1, n + 1)] = NEG
    return np.argmax(s, axis=1)

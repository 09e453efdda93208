"""Pure numpy CART builder; reference twin of the compiled ``_tree_ext`` module.

Both implementations draw feature subsets from the same splitmix64 stream,
sort node samples by (value, sample index), accumulate sums sequentially
and evaluate gains with the same expressions, so they grow identical trees.
"""

from __future__ import annotations

import numpy as np

SQUARED = 0
GINI = 1

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)


def _draw_features(rng: SplitMix64, d: int, k: int) -> list:
    perm = list(range(d))
    if k >= d:
        return perm
    for i in range(k):
        j = i + rng.next() % (d - i)
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:k]


def _leaf_value(ys: np.ndarray, criterion: int, lam: float) -> float:
    n = len(ys)
    if criterion == GINI:
        c1 = int(np.count_nonzero(ys))
        return 1.0 if 2 * c1 >= n else 0.0
    return float(np.cumsum(ys)[-1] / (n + lam))


def _best_split(X, y, node, feats, min_leaf, criterion, lam):
    n = len(node)
    best_gain = 0.0
    best = None
    nl = np.arange(1, n, dtype=float)
    nr = n - nl
    size_ok = (nl >= min_leaf) & (nr >= min_leaf)
    for f in feats:
        xs = X[node, f]
        order = np.lexsort((node, xs))
        xs = xs[order]
        ys = y[node[order]]
        cs = np.cumsum(ys)
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        total = cs[-1]
        sl = cs[:-1]
        if criterion == GINI:
            sr = total - sl
            parent = 2.0 * total * (n - total) / n
            child = 2.0 * sl * (nl - sl) / nl + 2.0 * sr * (nr - sr) / nr
            gains = parent - child
        else:
            sr = total - sl
            parent = total * total / (n + lam)
            gains = sl * sl / (nl + lam) + sr * sr / (nr + lam) - parent
        gains = np.where(valid, gains, -np.inf)
        p = int(np.argmax(gains))
        if gains[p] > best_gain:
            best_gain = float(gains[p])
            lo, hi = xs[p], xs[p + 1]
            thr = 0.5 * (lo + hi)
            if not thr < hi:
                thr = lo
            best = (f, float(thr))
    return best


def build_tree(X, y, samples, max_depth, min_leaf, max_features, criterion, lam, seed):
    """Grow one tree; returns (feature, threshold, left, right, value, n_node_samples)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.intp)
    d = X.shape[1]
    rng = SplitMix64(seed)
    cap = 2 * max(len(samples), 1)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    counts = np.zeros(cap, dtype=np.int64)

    stack = [(samples, 0, -1, False)]
    count = 0
    while stack:
        node, depth, parent, is_left = stack.pop()
        nid = count
        count += 1
        if parent >= 0:
            if is_left:
                left[parent] = nid
            else:
                right[parent] = nid
        ys = y[node]
        n = len(node)
        counts[nid] = n
        value[nid] = _leaf_value(ys, criterion, lam)
        can_split = (
            (max_depth < 0 or depth < max_depth)
            and n >= 2 * min_leaf
            and n >= 2
            and ys.min() != ys.max()
        )
        if not can_split:
            continue
        feats = _draw_features(rng, d, max_features)
        best = _best_split(X, y, node, feats, min_leaf, criterion, lam)
        if best is None:
            continue
        f, thr = best
        go_left = X[node, f] <= thr
        feature[nid] = f
        threshold[nid] = thr
        stack.append((node[~go_left], depth + 1, nid, False))
        stack.append((node[go_left], depth + 1, nid, True))
    return (
        feature[:count].copy(),
        threshold[:count].copy(),
        left[:count].copy(),
        right[:count].copy(),
        value[:count].copy(),
        counts[:count].copy(),
    )


def predict_tree(X, feature, threshold, left, right, value):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    rows = np.arange(n)
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active[r] = feature[node[r]] >= 0
    return value[node]


def predict_sum(X, trees, init=0.0):
    """``init`` plus the tree outputs, accumulated in tree order."""
    out = np.full(np.asarray(X).shape[0], float(init))
    for t in trees:
        out += predict_tree(X, *t[:5])
    return out

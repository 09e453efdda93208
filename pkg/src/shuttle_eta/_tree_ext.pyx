# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CART builder and tree traversal.

Mirrors ``_tree_py`` operation for operation; see that module for the contract.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

DEF SQUARED = 0
DEF GINI = 1


cdef struct Item:
    double x
    Py_ssize_t idx
    double y


cdef struct Frame:
    Py_ssize_t start
    Py_ssize_t end
    Py_ssize_t depth
    Py_ssize_t parent
    int is_left


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef int cmp_items(const void* a, const void* b) noexcept nogil:
    cdef const Item* ia = <const Item*>a
    cdef const Item* ib = <const Item*>b
    if ia.x < ib.x:
        return -1
    if ia.x > ib.x:
        return 1
    if ia.idx < ib.idx:
        return -1
    if ia.idx > ib.idx:
        return 1
    return 0


cdef double leaf_value(const double[::1] y, Py_ssize_t* samples, Py_ssize_t start,
                       Py_ssize_t end, int criterion, double lam) noexcept nogil:
    cdef Py_ssize_t i, n = end - start, c1 = 0
    cdef double s = 0.0
    if criterion == GINI:
        for i in range(start, end):
            if y[samples[i]] != 0.0:
                c1 += 1
        return 1.0 if 2 * c1 >= n else 0.0
    for i in range(start, end):
        s = s + y[samples[i]]
    return s / (<double>n + lam)


def build_tree(X, y, samples, Py_ssize_t max_depth, Py_ssize_t min_leaf,
               Py_ssize_t max_features, int criterion, double lam, seed):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.intp_t[::1] sv = np.ascontiguousarray(samples, dtype=np.intp).copy()
    cdef Py_ssize_t n_samp = sv.shape[0], d = Xv.shape[1]
    cdef Py_ssize_t cap = 2 * (n_samp if n_samp > 0 else 1)

    feature_a = np.full(cap, -1, dtype=np.int64)
    threshold_a = np.zeros(cap, dtype=np.float64)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    value_a = np.zeros(cap, dtype=np.float64)
    counts_a = np.zeros(cap, dtype=np.int64)
    cdef int64_t[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef int64_t[::1] left = left_a
    cdef int64_t[::1] right = right_a
    cdef double[::1] value = value_a
    cdef int64_t[::1] counts = counts_a

    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t* smp = <Py_ssize_t*>malloc(max(n_samp, 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp = <Py_ssize_t*>malloc(max(n_samp, 1) * sizeof(Py_ssize_t))
    cdef Item* items = <Item*>malloc(max(n_samp, 1) * sizeof(Item))
    cdef Py_ssize_t* perm = <Py_ssize_t*>malloc(max(d, 1) * sizeof(Py_ssize_t))
    cdef Frame* stack = <Frame*>malloc((cap + 1) * sizeof(Frame))
    if smp == NULL or tmp == NULL or items == NULL or perm == NULL or stack == NULL:
        free(smp); free(tmp); free(items); free(perm); free(stack)
        raise MemoryError()

    cdef Py_ssize_t i, j, k, p, f, top, count = 0, nid, n, nl, nr, start, end, depth
    cdef Py_ssize_t best_f, best_p, n_feats, swap, nleft
    cdef double best_gain, best_thr, gain, total, sl, sr, parent_score, child, lo, hi, thr
    cdef double ymin, ymax, yy
    cdef bint can_split

    for i in range(n_samp):
        smp[i] = sv[i]

    with nogil:
        top = 0
        stack[0].start = 0
        stack[0].end = n_samp
        stack[0].depth = 0
        stack[0].parent = -1
        stack[0].is_left = 0
        top = 1
        while top > 0:
            top -= 1
            start = stack[top].start
            end = stack[top].end
            depth = stack[top].depth
            nid = count
            count += 1
            if stack[top].parent >= 0:
                if stack[top].is_left:
                    left[stack[top].parent] = nid
                else:
                    right[stack[top].parent] = nid
            n = end - start
            counts[nid] = n
            value[nid] = leaf_value(yv, smp, start, end, criterion, lam)

            can_split = (max_depth < 0 or depth < max_depth) and n >= 2 * min_leaf and n >= 2
            if can_split:
                ymin = yv[smp[start]]
                ymax = ymin
                for i in range(start, end):
                    yy = yv[smp[i]]
                    if yy < ymin:
                        ymin = yy
                    if yy > ymax:
                        ymax = yy
                can_split = ymin != ymax
            if not can_split:
                continue

            # feature subset for this node
            for i in range(d):
                perm[i] = i
            if max_features >= d:
                n_feats = d
            else:
                n_feats = max_features
                for i in range(n_feats):
                    j = i + <Py_ssize_t>(splitmix_next(&state) % <uint64_t>(d - i))
                    swap = perm[i]
                    perm[i] = perm[j]
                    perm[j] = swap

            best_gain = 0.0
            best_f = -1
            best_thr = 0.0
            for k in range(n_feats):
                f = perm[k]
                for i in range(n):
                    items[i].idx = smp[start + i]
                    items[i].x = Xv[items[i].idx, f]
                    items[i].y = yv[items[i].idx]
                qsort(items, n, sizeof(Item), cmp_items)
                total = 0.0
                for i in range(n):
                    total = total + items[i].y
                if criterion == GINI:
                    parent_score = 2.0 * total * (<double>n - total) / <double>n
                else:
                    parent_score = total * total / (<double>n + lam)
                sl = 0.0
                best_p = -1
                for p in range(n - 1):
                    sl = sl + items[p].y
                    nl = p + 1
                    nr = n - nl
                    if not items[p].x < items[p + 1].x:
                        continue
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    sr = total - sl
                    if criterion == GINI:
                        child = (2.0 * sl * (<double>nl - sl) / <double>nl
                                 + 2.0 * sr * (<double>nr - sr) / <double>nr)
                        gain = parent_score - child
                    else:
                        gain = (sl * sl / (<double>nl + lam)
                                + sr * sr / (<double>nr + lam)) - parent_score
                    if gain > best_gain:
                        best_gain = gain
                        best_p = p
                if best_p >= 0:
                    lo = items[best_p].x
                    hi = items[best_p + 1].x
                    thr = 0.5 * (lo + hi)
                    if not thr < hi:
                        thr = lo
                    best_f = f
                    best_thr = thr
            if best_f < 0:
                continue

            # stable partition of the node's samples
            nleft = 0
            for i in range(start, end):
                if Xv[smp[i], best_f] <= best_thr:
                    smp[start + nleft] = smp[i]
                    nleft += 1
                else:
                    tmp[i - start - nleft] = smp[i]
            for i in range(end - start - nleft):
                smp[start + nleft + i] = tmp[i]
            feature[nid] = best_f
            threshold[nid] = best_thr

            stack[top].start = start + nleft
            stack[top].end = end
            stack[top].depth = depth + 1
            stack[top].parent = nid
            stack[top].is_left = 0
            top += 1
            stack[top].start = start
            stack[top].end = start + nleft
            stack[top].depth = depth + 1
            stack[top].parent = nid
            stack[top].is_left = 1
            top += 1

    free(smp); free(tmp); free(items); free(perm); free(stack)
    return (feature_a[:count].copy(), threshold_a[:count].copy(), left_a[:count].copy(),
            right_a[:count].copy(), value_a[:count].copy(), counts_a[:count].copy())


def predict_tree(X, feature, threshold, left, right, value):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const int64_t[::1] fv = np.ascontiguousarray(feature, dtype=np.int64)
    cdef const double[::1] tv = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef const int64_t[::1] lv = np.ascontiguousarray(left, dtype=np.int64)
    cdef const int64_t[::1] rv = np.ascontiguousarray(right, dtype=np.int64)
    cdef const double[::1] vv = np.ascontiguousarray(value, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], i
    cdef int64_t node
    out_a = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_a
    with nogil:
        for i in range(n):
            node = 0
            while fv[node] >= 0:
                if Xv[i, fv[node]] <= tv[node]:
                    node = lv[node]
                else:
                    node = rv[node]
            out[i] = vv[node]
    return out_a


def predict_sum(X, trees, double init=0.0):
    """``init`` plus the tree outputs, accumulated in tree order."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], i
    out_a = np.full(n, init, dtype=np.float64)
    cdef double[::1] out = out_a
    cdef const int64_t[::1] fv
    cdef const double[::1] tv
    cdef const int64_t[::1] lv
    cdef const int64_t[::1] rv
    cdef const double[::1] vv
    cdef int64_t node
    for t in trees:
        fv = np.ascontiguousarray(t[0], dtype=np.int64)
        tv = np.ascontiguousarray(t[1], dtype=np.float64)
        lv = np.ascontiguousarray(t[2], dtype=np.int64)
        rv = np.ascontiguousarray(t[3], dtype=np.int64)
        vv = np.ascontiguousarray(t[4], dtype=np.float64)
        with nogil:
            for i in range(n):
                node = 0
                while fv[node] >= 0:
                    if Xv[i, fv[node]] <= tv[node]:
                        node = lv[node]
                    else:
                        node = rv[node]
                out[i] = out[i] + vv[node]
    return out_a

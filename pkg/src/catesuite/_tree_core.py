"""Numba kernels for tree growth and traversal.

Shared conventions: nodes live in flat parallel arrays; ``feature[k] == -1``
marks a leaf; candidate thresholds are midpoints between consecutive distinct
sorted values; the first best-scoring split in ascending column order wins
ties. All randomness is consumed from a caller-supplied pool of uint64 draws
so the kernels stay deterministic given their inputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _select_columns(d, mtry, pool, cursor, scratch):
    """Partial Fisher-Yates subset of column indices, returned sorted."""
    for j in range(d):
        scratch[j] = j
    m = mtry if mtry < d else d
    for t in range(m):
        r = t + int(pool[cursor + t] % np.uint64(d - t))
        tmp = scratch[t]
        scratch[t] = scratch[r]
        scratch[r] = tmp
    sub = np.sort(scratch[:m].copy())
    return sub


@njit(cache=True, nogil=True)
def grow_regression_tree(X, y, w, max_depth, min_leaf, mtry, pool):
    """Grow a weighted-squared-error CART tree.

    Returns (feature, threshold, left, right, value, n_nodes). ``pool`` must
    hold at least ``max_nodes * mtry`` uint64 draws.
    """
    n, d = X.shape
    max_nodes = 2 * max(1, n // max(min_leaf, 1)) + 3
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, LEAF, np.int64)
    right = np.full(max_nodes, LEAF, np.int64)
    value = np.zeros(max_nodes)

    pos = np.arange(n)
    scratch = np.empty(n, np.int64)
    col_scratch = np.empty(d, np.int64)

    stack = np.empty((max_nodes + 1, 4), np.int64)  # start, end, depth, node
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    pool_cursor = 0

    while top > 0:
        top -= 1
        start, end, depth, node = stack[top]
        m = end - start

        W = 0.0
        S = 0.0
        Q = 0.0
        for i in range(start, end):
            p = pos[i]
            W += w[p]
            S += w[p] * y[p]
            Q += w[p] * y[p] * y[p]
        value[node] = S / W
        parent_score = S * S / W
        node_sse = Q - parent_score

        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        if node_sse <= 1e-12 * max(1.0, Q):
            continue  # pure node

        cols = _select_columns(d, mtry, pool, pool_cursor, col_scratch)
        pool_cursor += len(cols)

        best_score = parent_score
        best_col = -1
        best_thr = 0.0
        colv = np.empty(m)
        for ci in range(len(cols)):
            c = cols[ci]
            for i in range(m):
                colv[i] = X[pos[start + i], c]
            order = np.argsort(colv)
            wl = 0.0
            sl = 0.0
            for i in range(m - 1):
                p = pos[start + order[i]]
                wl += w[p]
                sl += w[p] * y[p]
                if colv[order[i + 1]] <= colv[order[i]]:
                    continue
                if i + 1 < min_leaf or m - i - 1 < min_leaf:
                    continue
                wr = W - wl
                if wl <= 0.0 or wr <= 0.0:
                    continue
                sr = S - sl
                score = sl * sl / wl + sr * sr / wr
                if score > best_score:
                    best_score = score
                    best_col = c
                    best_thr = 0.5 * (colv[order[i]] + colv[order[i + 1]])

        if best_col < 0:
            continue

        # stable partition of pos[start:end] by the chosen split
        n_left = 0
        for i in range(start, end):
            if X[pos[i], best_col] <= best_thr:
                scratch[start + n_left] = pos[i]
                n_left += 1
        k = start + n_left
        for i in range(start, end):
            if X[pos[i], best_col] > best_thr:
                scratch[k] = pos[i]
                k += 1
        for i in range(start, end):
            pos[i] = scratch[i]

        feature[node] = best_col
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = start
        stack[top, 1] = start + n_left
        stack[top, 2] = depth + 1
        stack[top, 3] = n_nodes
        top += 1
        stack[top, 0] = start + n_left
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = n_nodes + 1
        top += 1
        n_nodes += 2

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], n_nodes


@njit(cache=True, nogil=True)
def predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def leaf_of(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def grow_causal_tree(
    X_s, y_s, z_s, X_e, y_e, z_e, min_treated, min_control, mtry, pool
):
    """Grow one honest causal tree.

    Structure rows (``_s``) drive the greedy split search, which maximizes
    n_L * n_R * (tau_L - tau_R)^2 of the child difference-in-means effects.
    Estimation rows (``_e``) supply each leaf's difference-in-means value.
    A split is valid only if both children keep at least ``min_treated``
    treated and ``min_control`` control rows in BOTH halves.
    """
    ns, d = X_s.shape
    ne = X_e.shape[0]
    min_arm = min_treated if min_treated < min_control else min_control
    max_nodes = 2 * max(1, ns // max(2 * min_arm, 1)) + 3
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, LEAF, np.int64)
    right = np.full(max_nodes, LEAF, np.int64)
    value = np.zeros(max_nodes)

    pos_s = np.arange(ns)
    pos_e = np.arange(ne)
    scratch = np.empty(ns if ns > ne else ne, np.int64)
    col_scratch = np.empty(d, np.int64)

    # start_s, end_s, start_e, end_e, depth unused, node
    stack = np.empty((max_nodes + 1, 5), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = ns
    stack[0, 2] = 0
    stack[0, 3] = ne
    stack[0, 4] = 0
    top = 1
    n_nodes = 1
    pool_cursor = 0

    while top > 0:
        top -= 1
        ss, se, es, ee, node = stack[top]
        ms = se - ss
        me = ee - es

        # estimation-half difference in means for this node's value
        s1 = 0.0
        n1 = 0
        s0 = 0.0
        n0 = 0
        for i in range(es, ee):
            p = pos_e[i]
            if z_e[p] == 1:
                s1 += y_e[p]
                n1 += 1
            else:
                s0 += y_e[p]
                n0 += 1
        value[node] = s1 / n1 - s0 / n0

        # structure-half arm totals
        t1 = 0
        t0 = 0
        sy1 = 0.0
        sy0 = 0.0
        for i in range(ss, se):
            p = pos_s[i]
            if z_s[p] == 1:
                t1 += 1
                sy1 += y_s[p]
            else:
                t0 += 1
                sy0 += y_s[p]
        if t1 < 2 * min_treated or t0 < 2 * min_control:
            continue
        if n1 < 2 * min_treated or n0 < 2 * min_control:
            continue

        cols = _select_columns(d, mtry, pool, pool_cursor, col_scratch)
        pool_cursor += len(cols)

        best_score = 0.0
        best_col = -1
        best_thr = 0.0
        colv = np.empty(ms)
        ev1 = np.empty(me)
        ev0 = np.empty(me)
        for ci in range(len(cols)):
            c = cols[ci]
            for i in range(ms):
                colv[i] = X_s[pos_s[ss + i], c]
            order = np.argsort(colv)
            ne1 = 0
            ne0 = 0
            for i in range(es, ee):
                p = pos_e[i]
                if z_e[p] == 1:
                    ev1[ne1] = X_e[p, c]
                    ne1 += 1
                else:
                    ev0[ne0] = X_e[p, c]
                    ne0 += 1
            e1_sorted = np.sort(ev1[:ne1])
            e0_sorted = np.sort(ev0[:ne0])
            p1 = 0
            p0 = 0

            c1 = 0
            c0 = 0
            cy1 = 0.0
            cy0 = 0.0
            for i in range(ms - 1):
                p = pos_s[ss + order[i]]
                if z_s[p] == 1:
                    c1 += 1
                    cy1 += y_s[p]
                else:
                    c0 += 1
                    cy0 += y_s[p]
                if colv[order[i + 1]] <= colv[order[i]]:
                    continue
                thr = 0.5 * (colv[order[i]] + colv[order[i + 1]])
                if c1 < min_treated or c0 < min_control:
                    continue
                if t1 - c1 < min_treated or t0 - c0 < min_control:
                    continue
                while p1 < ne1 and e1_sorted[p1] <= thr:
                    p1 += 1
                while p0 < ne0 and e0_sorted[p0] <= thr:
                    p0 += 1
                if p1 < min_treated or p0 < min_control:
                    continue
                if ne1 - p1 < min_treated or ne0 - p0 < min_control:
                    continue
                tau_l = cy1 / c1 - cy0 / c0
                tau_r = (sy1 - cy1) / (t1 - c1) - (sy0 - cy0) / (t0 - c0)
                diff = tau_l - tau_r
                score = (i + 1.0) * (ms - i - 1.0) * diff * diff
                if score > best_score:
                    best_score = score
                    best_col = c
                    best_thr = thr

        if best_col < 0:
            continue

        n_left = 0
        for i in range(ss, se):
            if X_s[pos_s[i], best_col] <= best_thr:
                scratch[ss + n_left] = pos_s[i]
                n_left += 1
        k = ss + n_left
        for i in range(ss, se):
            if X_s[pos_s[i], best_col] > best_thr:
                scratch[k] = pos_s[i]
                k += 1
        for i in range(ss, se):
            pos_s[i] = scratch[i]
        ns_left = n_left

        n_left = 0
        for i in range(es, ee):
            if X_e[pos_e[i], best_col] <= best_thr:
                scratch[es + n_left] = pos_e[i]
                n_left += 1
        k = es + n_left
        for i in range(es, ee):
            if X_e[pos_e[i], best_col] > best_thr:
                scratch[k] = pos_e[i]
                k += 1
        for i in range(es, ee):
            pos_e[i] = scratch[i]
        ne_left = n_left

        feature[node] = best_col
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = ss
        stack[top, 1] = ss + ns_left
        stack[top, 2] = es
        stack[top, 3] = es + ne_left
        stack[top, 4] = n_nodes
        top += 1
        stack[top, 0] = ss + ns_left
        stack[top, 1] = se
        stack[top, 2] = es + ne_left
        stack[top, 3] = ee
        stack[top, 4] = n_nodes + 1
        top += 1
        n_nodes += 2

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], n_nodes

"""Compiled kernels for hierarchical pairwise scores.

Every kernel takes data already restricted to a single horizon and returns
``(scores, wins)``: ``scores[i] = sum_j u_ij`` and ``wins[i]`` the number of
comparisons subject ``i`` wins.  ``wins.sum()`` is the number of informative
unordered pairs.

Layer rule: ``i`` beats ``j`` on a layer iff ``j`` has an event at ``t_j``
and ``t_i > t_j`` strictly.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _bit_add(tree, pos, value):
    n = tree.shape[0]
    pos += 1
    while pos <= n:
        tree[pos - 1] += value
        pos += pos & (-pos)


@numba.njit(cache=True)
def _bit_below(tree, pos):
    # total over ranks strictly below ``pos``
    total = 0
    while pos > 0:
        total += tree[pos - 1]
        pos -= pos & (-pos)
    return total


@numba.njit(cache=True)
def _dense_ranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], np.int64)
    r = 0
    for k in range(values.shape[0]):
        if k > 0 and values[order[k]] != values[order[k - 1]]:
            r += 1
        ranks[order[k]] = r
    return ranks, r + 1


@numba.njit(cache=True)
def two_layer_scores(a, d, b, f):
    """O(N log N) scores for a two-layer hierarchy.

    ``a, d`` are layer-1 times and event flags, ``b, f`` layer-2.  With
    ``s1``/``s2`` the unconditional per-layer sums, the layer-2 part must be
    removed for pairs already decided on layer 1, which needs four strict
    dominance counts::

        c1 = #{j: d_j, f_j, a_j < a_i, b_j < b_i}
        c2 = #{j: d_j, a_j < a_i, b_j > b_i}
        c3 = #{j: f_j, a_j > a_i, b_j < b_i}
        c4 = #{j: a_j > a_i, b_j > b_i}

    so that ``U_i = s1 + s2 - c1 + f_i c2 - d_i (c3 - f_i c4)``.  The counts
    come from two sweeps over ``a`` with Fenwick trees indexed by the rank of
    ``b``; equal ``a`` values are queried as a group before insertion.
    """
    n = a.shape[0]
    rb, nr = _dense_ranks(b)
    oa = np.argsort(a, kind="mergesort")
    ob = np.argsort(b, kind="mergesort")

    c1 = np.zeros(n, np.int64)
    c2 = np.zeros(n, np.int64)
    c3 = np.zeros(n, np.int64)
    c4 = np.zeros(n, np.int64)
    w1 = np.zeros(n, np.int64)  # layer-1 events strictly before a_i
    l1 = np.zeros(n, np.int64)  # subjects strictly after a_i
    w2 = np.zeros(n, np.int64)
    l2 = np.zeros(n, np.int64)

    tree_df = np.zeros(nr, np.int64)
    tree_d = np.zeros(nr, np.int64)
    n_d = 0
    k = 0
    while k < n:
        g = k
        while g < n and a[oa[g]] == a[oa[k]]:
            g += 1
        for m in range(k, g):
            i = oa[m]
            c1[i] = _bit_below(tree_df, rb[i])
            c2[i] = n_d - _bit_below(tree_d, rb[i] + 1)
            w1[i] = n_d
            l1[i] = n - g
        for m in range(k, g):
            i = oa[m]
            if d[i]:
                n_d += 1
                _bit_add(tree_d, rb[i], 1)
                if f[i]:
                    _bit_add(tree_df, rb[i], 1)
        k = g

    tree_f = np.zeros(nr, np.int64)
    tree_all = np.zeros(nr, np.int64)
    n_seen = 0
    k = n - 1
    while k >= 0:
        g = k
        while g >= 0 and a[oa[g]] == a[oa[k]]:
            g -= 1
        for m in range(g + 1, k + 1):
            i = oa[m]
            c3[i] = _bit_below(tree_f, rb[i])
            c4[i] = n_seen - _bit_below(tree_all, rb[i] + 1)
        for m in range(g + 1, k + 1):
            i = oa[m]
            n_seen += 1
            _bit_add(tree_all, rb[i], 1)
            if f[i]:
                _bit_add(tree_f, rb[i], 1)
        k = g

    n_f = 0
    k = 0
    while k < n:
        g = k
        while g < n and b[ob[g]] == b[ob[k]]:
            g += 1
        for m in range(k, g):
            w2[ob[m]] = n_f
            l2[ob[m]] = n - g
        for m in range(k, g):
            if f[ob[m]]:
                n_f += 1
        k = g

    scores = np.empty(n, np.int64)
    wins = np.empty(n, np.int64)
    for i in range(n):
        di = np.int64(d[i])
        fi = np.int64(f[i])
        win = w1[i] + w2[i] - c1[i] - di * c3[i]
        loss = di * l1[i] + fi * l2[i] - fi * c2[i] - di * fi * c4[i]
        scores[i] = win - loss
        wins[i] = win
    return scores, wins


@numba.njit(cache=True)
def pairwise_scores(times, events):
    """Direct O(N^2) scores for any number of layers; ``times`` is (N, L)."""
    n, n_layers = times.shape
    scores = np.zeros(n, np.int64)
    wins = np.zeros(n, np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            u = 0
            for layer in range(n_layers):
                ti = times[i, layer]
                tj = times[j, layer]
                if events[j, layer] and ti > tj:
                    u = 1
                    break
                if events[i, layer] and tj > ti:
                    u = -1
                    break
            if u == 1:
                scores[i] += 1
                scores[j] -= 1
                wins[i] += 1
            elif u == -1:
                scores[i] -= 1
                scores[j] += 1
                wins[j] += 1
    return scores, wins


def subject_scores(times: np.ndarray, events: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dispatch to the fastest kernel valid for the layer count."""
    n_layers = times.shape[1]
    if n_layers == 1:
        zeros = np.zeros(times.shape[0])
        none = np.zeros(times.shape[0], dtype=np.bool_)
        return two_layer_scores(times[:, 0], events[:, 0], zeros, none)
    if n_layers == 2:
        return two_layer_scores(
            np.ascontiguousarray(times[:, 0]),
            np.ascontiguousarray(events[:, 0]),
            np.ascontiguousarray(times[:, 1]),
            np.ascontiguousarray(events[:, 1]),
        )
    return pairwise_scores(times, events)

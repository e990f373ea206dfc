# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double TOP_P_SLACK = 1e-12


def top_p_filter(probs, double p):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(-pr, kind="stable").astype(np.int64)
    cdef Py_ssize_t n = pr.shape[0], i, cut = n - 1
    cdef double cum = 0.0
    for i in range(n):
        cum += pr[order[i]]
        if cum >= p - TOP_P_SLACK:
            cut = i
            break
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    for i in range(cut + 1):
        out[order[i]] = pr[order[i]] / cum
    return out


def residual(p_target, p_draft):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pt = np.ascontiguousarray(p_target, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pd = np.ascontiguousarray(p_draft, dtype=np.float64)
    cdef Py_ssize_t n = pt.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double total = 0.0, d
    for i in range(n):
        d = pt[i] - pd[i]
        if d < 0.0:
            d = 0.0
        out[i] = d
        total += d
    return out, total


def sample_index(probs, double u):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = pr.shape[0], i, last = -1
    cdef double total = 0.0, cum = 0.0, target
    for i in range(n):
        total += pr[i]
        if pr[i] > 0.0:
            last = i
    target = u * total
    for i in range(n):
        cum += pr[i]
        if cum > target:
            return i
    return last


def lcs_length(a, b):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] x = np.asarray(a, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] y = np.asarray(b, dtype=np.int64)
    cdef Py_ssize_t m = x.shape[0], n = y.shape[0], i, j
    if m == 0 or n == 0:
        return 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] prev = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur = np.zeros(n + 1, dtype=np.int64)
    for i in range(m):
        cur[0] = 0
        for j in range(n):
            if x[i] == y[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        prev, cur = cur, prev
    return int(prev[n])


def suffix_match(tokens, int max_order):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t = np.asarray(tokens, dtype=np.int64)
    cdef Py_ssize_t n = t.shape[0], order, start, k
    cdef bint ok
    order = max_order if max_order < n - 1 else n - 1
    while order > 0:
        start = n - order - 1
        while start >= 0:
            ok = True
            for k in range(order):
                if t[start + k] != t[n - order + k]:
                    ok = False
                    break
            if ok:
                return start + order, order
            start -= 1
        order -= 1
    return -1, 0

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: box-range edge enumeration and iterative Tarjan SCC."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport qsort
from libcpp.vector cimport vector
from libc.stdint cimport int64_t

cnp.import_array()


cdef int _cmp_i64(const void* a, const void* b) noexcept nogil:
    cdef int64_t x = (<int64_t*>a)[0]
    cdef int64_t y = (<int64_t*>b)[0]
    return (x > y) - (x < y)


def enumerate_edges(const int64_t[:, ::1] lo, const int64_t[:, ::1] hi,
                    Py_ssize_t samples_per_box, const int64_t[::1] shape,
                    bint periodic, int64_t n_boxes):
    """CSR adjacency of boxes met by per-sample index ranges ``[lo, hi]``.

    Row ``b`` collects the samples ``b*samples_per_box ...``. Ranges wider than the
    grid on a periodic axis must already be clamped to ``[0, n-1]``; on a
    non-periodic axis they must already be clipped (an empty range has hi < lo).
    """
    cdef Py_ssize_t n_rows = lo.shape[0]
    cdef Py_ssize_t d = lo.shape[1]
    cdef Py_ssize_t nb = n_rows // samples_per_box
    cdef vector[int64_t] out
    cdef cnp.ndarray[int64_t, ndim=1] indptr = np.zeros(nb + 1, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] stamp_arr = np.full(n_boxes, -1, dtype=np.int64)
    cdef int64_t[::1] stamp = stamp_arr
    cdef int64_t[32] cur
    cdef int64_t[32] stride
    cdef Py_ssize_t b, s, row, ax, start
    cdef int64_t k, idx, n_ax
    cdef bint empty, done

    if d > 32:
        raise ValueError("dimension above 32 not supported")
    stride[d - 1] = 1
    for ax in range(d - 2, -1, -1):
        stride[ax] = stride[ax + 1] * shape[ax + 1]

    with nogil:
        for b in range(nb):
            start = out.size()
            for s in range(samples_per_box):
                row = b * samples_per_box + s
                empty = False
                for ax in range(d):
                    if hi[row, ax] < lo[row, ax]:
                        empty = True
                    cur[ax] = lo[row, ax]
                if empty:
                    continue
                done = False
                while not done:
                    idx = 0
                    for ax in range(d):
                        k = cur[ax]
                        if periodic:
                            n_ax = shape[ax]
                            k = k % n_ax
                            if k < 0:
                                k = k + n_ax
                        idx = idx + k * stride[ax]
                    if stamp[idx] != b:
                        stamp[idx] = b
                        out.push_back(idx)
                    # odometer over the box of indices
                    ax = d - 1
                    while True:
                        cur[ax] = cur[ax] + 1
                        if cur[ax] <= hi[row, ax]:
                            break
                        cur[ax] = lo[row, ax]
                        if ax == 0:
                            done = True
                            break
                        ax = ax - 1
            if out.size() > start:
                qsort(&out[start], out.size() - start, sizeof(int64_t), _cmp_i64)
            indptr[b + 1] = out.size()

    indices = np.empty(out.size(), dtype=np.int64)
    cdef int64_t[::1] iv = indices
    cdef Py_ssize_t i
    for i in range(<Py_ssize_t>out.size()):
        iv[i] = out[i]
    return indptr, indices


def tarjan_scc(const int64_t[::1] indptr, const int64_t[::1] indices):
    """Component label per node; labels are assigned in order of completion,
    so label order is a reverse topological order of the condensation."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[int64_t, ndim=1] comp_arr = np.full(n, -1, dtype=np.int64)
    cdef int64_t[::1] comp = comp_arr
    cdef cnp.ndarray[int64_t, ndim=1] index_arr = np.full(n, -1, dtype=np.int64)
    cdef int64_t[::1] index = index_arr
    cdef cnp.ndarray[int64_t, ndim=1] low_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] low = low_arr
    cdef cnp.ndarray[int64_t, ndim=1] it_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] it = it_arr
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] onstack_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] onstack = onstack_arr
    cdef vector[int64_t] stack
    cdef vector[int64_t] call
    cdef int64_t counter = 0, n_comp = 0
    cdef int64_t root, v, w, u
    cdef Py_ssize_t r

    with nogil:
        for r in range(n):
            if index[r] != -1:
                continue
            root = r
            call.push_back(root)
            index[root] = counter
            low[root] = counter
            counter += 1
            it[root] = indptr[root]
            stack.push_back(root)
            onstack[root] = 1
            while call.size() > 0:
                v = call.back()
                if it[v] < indptr[v + 1]:
                    w = indices[it[v]]
                    it[v] += 1
                    if index[w] == -1:
                        index[w] = counter
                        low[w] = counter
                        counter += 1
                        it[w] = indptr[w]
                        stack.push_back(w)
                        onstack[w] = 1
                        call.push_back(w)
                    elif onstack[w] and index[w] < low[v]:
                        low[v] = index[w]
                else:
                    call.pop_back()
                    if call.size() > 0:
                        u = call.back()
                        if low[v] < low[u]:
                            low[u] = low[v]
                    if low[v] == index[v]:
                        while True:
                            w = stack.back()
                            stack.pop_back()
                            onstack[w] = 0
                            comp[w] = n_comp
                            if w == v:
                                break
                        n_comp += 1
    return comp_arr, int(n_comp)

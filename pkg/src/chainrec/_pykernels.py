"""Pure-Python/numpy fallback for the compiled kernels in ``_ckernels``.

Same signatures and same outputs (bit-for-bit) as the compiled versions.
"""

from __future__ import annotations

import numpy as np

_CANDIDATE_BUDGET = 1 << 22


def enumerate_edges(lo, hi, samples_per_box, shape, periodic, n_boxes):
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    shape = np.asarray(shape, dtype=np.int64)
    n_rows, d = lo.shape
    nb = n_rows // samples_per_box
    owner = np.repeat(np.arange(nb, dtype=np.int64), samples_per_box)
    width = hi - lo + 1
    keep = np.all(width > 0, axis=1)
    lo, width, owner = lo[keep], width[keep], owner[keep]

    strides = np.ones(d, dtype=np.int64)
    for ax in range(d - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shape[ax + 1]

    keys = []
    # group rows by their range volume so each batch broadcasts a small offset grid
    vol = np.prod(width, axis=1)
    order = np.argsort(vol, kind="stable")
    pos = 0
    while pos < order.size:
        wmax = width[order[pos]].copy()
        end = pos + 1
        # grow the batch while the padded candidate count stays within budget
        step = max(1, _CANDIDATE_BUDGET // max(int(np.prod(wmax)), 1))
        end = min(order.size, pos + step)
        rows = order[pos:end]
        wmax = width[rows].max(axis=0)
        while end - pos > 1 and (end - pos) * int(np.prod(wmax)) > _CANDIDATE_BUDGET:
            end = pos + max(1, (end - pos) // 2)
            rows = order[pos:end]
            wmax = width[rows].max(axis=0)
        grids = np.meshgrid(*[np.arange(w, dtype=np.int64) for w in wmax], indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=1)  # (P, d)
        k = lo[rows][:, None, :] + offs[None, :, :]
        valid = np.all(offs[None, :, :] < width[rows][:, None, :], axis=2)
        if periodic:
            k %= shape
        ids = (k * strides).sum(axis=2)
        keys.append(owner[rows][:, None].repeat(offs.shape[0], axis=1)[valid] * n_boxes + ids[valid])
        pos = end

    if keys:
        allkeys = np.unique(np.concatenate(keys))
    else:
        allkeys = np.zeros(0, dtype=np.int64)
    src = allkeys // n_boxes
    indices = allkeys % n_boxes
    indptr = np.zeros(nb + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), indices.astype(np.int64)


def tarjan_scc(indptr, indices):
    indptr = np.asarray(indptr).tolist()
    indices = np.asarray(indices).tolist()
    n = len(indptr) - 1
    comp = [-1] * n
    index = [-1] * n
    low = [0] * n
    it = [0] * n
    onstack = [False] * n
    stack = []
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        index[root] = low[root] = counter
        counter += 1
        it[root] = indptr[root]
        stack.append(root)
        onstack[root] = True
        call = [root]
        while call:
            v = call[-1]
            i = it[v]
            end = indptr[v + 1]
            descended = False
            while i < end:
                w = indices[i]
                i += 1
                if index[w] == -1:
                    it[v] = i
                    index[w] = low[w] = counter
                    counter += 1
                    it[w] = indptr[w]
                    stack.append(w)
                    onstack[w] = True
                    call.append(w)
                    descended = True
                    break
                if onstack[w] and index[w] < low[v]:
                    low[v] = index[w]
            if descended:
                continue
            it[v] = i
            call.pop()
            if call:
                u = call[-1]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    onstack[w] = False
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
    return np.asarray(comp, dtype=np.int64), n_comp

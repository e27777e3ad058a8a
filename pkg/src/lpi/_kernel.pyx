# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled pivot kernel; same contract as ``lpi._kernel_py.pivot``."""


def pivot(list rows, list rhs, list basis, Py_ssize_t r, object j, dict obj, list zbox):
    cdef dict prow = rows[r]
    cdef dict new
    cdef dict row
    cdef Py_ssize_t i, n = len(rows)
    cdef object a, inv, b, f, k, c, v, leaving
    a = prow.pop(j)
    leaving = basis[r]
    inv = 1 / a
    new = {}
    for k, c in prow.items():
        new[k] = c * inv
    new[leaving] = inv
    b = rhs[r] * inv
    rows[r] = new
    rhs[r] = b
    basis[r] = j
    for i in range(n):
        if i == r:
            continue
        row = rows[i]
        f = row.pop(j, None)
        if f is None:
            continue
        for k, c in new.items():
            v = row.get(k, 0) - f * c
            if v:
                row[k] = v
            else:
                row.pop(k, None)
        rhs[i] = rhs[i] - f * b
    f = obj.pop(j, None)
    if f is not None:
        for k, c in new.items():
            v = obj.get(k, 0) - f * c
            if v:
                obj[k] = v
            else:
                obj.pop(k, None)
        zbox[0] = zbox[0] + f * b

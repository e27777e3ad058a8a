"""Pure-Python pivot kernel (fallback for the compiled ``_kernel`` module)."""


def pivot(rows, rhs, basis, r, j, obj, zbox):
    """Exchange basic variable of row ``r`` with column ``j`` in place.

    Rows are ``x_basis[i] + sum_k rows[i][k] x_k = rhs[i]``; ``obj`` holds the
    reduced costs of ``z = zbox[0] + sum_k obj[k] x_k``.
    """
    prow = rows[r]
    a = prow.pop(j)
    leaving = basis[r]
    inv = 1 / a
    new = {k: c * inv for k, c in prow.items()}
    new[leaving] = inv
    b = rhs[r] * inv
    rows[r] = new
    rhs[r] = b
    basis[r] = j
    for i, row in enumerate(rows):
        if i == r:
            continue
        f = row.pop(j, None)
        if f is None:
            continue
        for k, c in new.items():
            v = row.get(k, 0) - f * c
            if v:
                row[k] = v
            else:
                row.pop(k, None)
        rhs[i] -= f * b
    f = obj.pop(j, None)
    if f is not None:
        for k, c in new.items():
            v = obj.get(k, 0) - f * c
            if v:
                obj[k] = v
            else:
                obj.pop(k, None)
        zbox[0] += f * b

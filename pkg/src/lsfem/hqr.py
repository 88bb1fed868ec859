"""Dense non-symmetric eigenvalues: balancing, Hessenberg reduction and the
implicitly shifted (Francis double-shift) QR iteration.

This is an independent implementation of the path LAPACK's ``dgeev`` takes
for eigenvalues only. :func:`eigvals` is interchangeable with
``scipy.linalg.eigvals`` on real matrices and is selectable as the
``"francis"`` backend of :func:`lsfem.spectral.eigensolve`.
"""

import numpy as np
from numba import njit

from .errors import NumericalFailure

RADIX = 2.0
MAX_SWEEPS_PER_ROW = 30


@njit(cache=True)
def balance(a):
    """Diagonal similarity scaling by powers of two so that row and column
    norms are comparable. Operates in place and returns the scaling vector."""
    n = a.shape[0]
    scale = np.ones(n)
    sqrdx = RADIX * RADIX
    done = False
    while not done:
        done = True
        for i in range(n):
            c = 0.0
            r = 0.0
            for j in range(n):
                if j != i:
                    c += abs(a[j, i])
                    r += abs(a[i, j])
            if c == 0.0 or r == 0.0:
                continue
            g = r / RADIX
            f = 1.0
            s = c + r
            while c < g:
                f *= RADIX
                c *= sqrdx
            g = r * RADIX
            while c > g:
                f /= RADIX
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                g = 1.0 / f
                scale[i] *= f
                for j in range(n):
                    a[i, j] *= g
                for j in range(n):
                    a[j, i] *= f
    return scale


@njit(cache=True)
def hessenberg(a):
    """Householder reduction to upper Hessenberg form, in place."""
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1 :, k].copy()
        alpha = np.sqrt(np.sum(x * x))
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vnorm = np.sqrt(np.sum(v * v))
        if vnorm == 0.0:
            continue
        v /= vnorm
        m = v.shape[0]
        # left reflection on rows k+1.., columns k..
        for j in range(k, n):
            d = 0.0
            for i in range(m):
                d += v[i] * a[k + 1 + i, j]
            for i in range(m):
                a[k + 1 + i, j] -= 2.0 * v[i] * d
        # right reflection on columns k+1..
        for i in range(n):
            d = 0.0
            for j in range(m):
                d += a[i, k + 1 + j] * v[j]
            for j in range(m):
                a[i, k + 1 + j] -= 2.0 * d * v[j]
        a[k + 2 :, k] = 0.0
        a[k + 1, k] = alpha
    return a


@njit(cache=True)
def _hqr(a, wr, wi, max_sweeps):
    """Eigenvalues of the upper Hessenberg matrix ``a`` (destroyed).

    Returns the number of QR sweeps performed, or -1 on non-convergence.
    """
    n = a.shape[0]
    eps = np.finfo(np.float64).eps
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i, j])
    nn = n - 1
    t = 0.0
    total = 0
    x = y = z = w = p = q = r = s = 0.0
    while nn >= 0:
        its = 0
        while True:
            # look for a negligible subdiagonal element
            l = 0
            for ll in range(nn, 0, -1):
                s = abs(a[ll - 1, ll - 1]) + abs(a[ll, ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll, ll - 1]) <= eps * s:
                    a[ll, ll - 1] = 0.0
                    l = ll
                    break
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = np.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + (z if p >= 0.0 else -z)
                    wr[nn - 1] = x + z
                    wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = 0.0
                    wi[nn] = 0.0
                else:
                    wr[nn - 1] = x + p
                    wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= max_sweeps:
                return -1
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = 0.75 * s
                y = x
                w = -0.4375 * s * s
            its += 1
            total += 1
            # two consecutive small subdiagonal elements
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= eps * v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            # double-shift QR step on rows l..nn, columns l..nn
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = 0.0
                    if k != nn - 1:
                        r = a[k + 2, k - 1]
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = np.sqrt(p * p + q * q + r * r)
                if p < 0.0:
                    s = -s
                if s != 0.0:
                    if k == m:
                        if l != m:
                            a[k, k - 1] = -a[k, k - 1]
                    else:
                        a[k, k - 1] = -s * x
                    p += s
                    x = p / s
                    y = q / s
                    z = r / s
                    q /= p
                    r /= p
                    for j in range(k, nn + 1):
                        p = a[k, j] + q * a[k + 1, j]
                        if k != nn - 1:
                            p += r * a[k + 2, j]
                            a[k + 2, j] -= p * z
                        a[k + 1, j] -= p * y
                        a[k, j] -= p * x
                    mmin = nn if nn < k + 3 else k + 3
                    for i in range(l, mmin + 1):
                        p = x * a[i, k] + y * a[i, k + 1]
                        if k != nn - 1:
                            p += z * a[i, k + 2]
                            a[i, k + 2] -= p * r
                        a[i, k + 1] -= p * q
                        a[i, k] -= p
    return total


def eigvals(matrix, dump_path=None):
    """Eigenvalues of a real square matrix.

    Raises :class:`NumericalFailure` if the QR iteration needs more than
    ``30 * n`` sweeps; the offending matrix is attached to the exception and
    written to ``dump_path`` (``.npy``) when given.
    """
    a = np.array(matrix, dtype=np.float64, order="C", copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("eigvals expects a square matrix")
    n = a.shape[0]
    if n == 0:
        return np.empty(0, dtype=complex)
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("matrix contains non-finite entries", matrix=np.asarray(matrix))
    balance(a)
    hessenberg(a)
    wr = np.zeros(n)
    wi = np.zeros(n)
    sweeps = _hqr(a, wr, wi, MAX_SWEEPS_PER_ROW * n)
    if sweeps < 0:
        original = np.asarray(matrix)
        if dump_path is not None:
            np.save(dump_path, original)
        raise NumericalFailure(
            f"QR iteration did not converge within {MAX_SWEEPS_PER_ROW * n} sweeps",
            matrix=original,
            dump_path=dump_path,
        )
    return wr + 1j * wi

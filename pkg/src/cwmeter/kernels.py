"""Hot loop of the registration master equation.

Both backends evaluate the same arithmetic in the same order, so they agree
to the last bit in practice.  The differences are regrouped as

``c * [(f+(i+1) + f-(i-1)) - (f+(i) + f-(i))]``

which is invariant, bit for bit, under the joint reflection of the grid (the
reflection swaps the ``+`` and ``-`` coefficients).  For ``C_u`` the products
``u_x Delta(u_x f) + u_z Delta(u_z f)`` are expanded into overlaps of
neighboring frame vectors ``u(i) . u(i+-1)`` and the norm ``u(i) . u(i)``.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

__all__ = ["stencil_rhs", "stencil_rhs_numpy", "stencil_rhs_numba", "frame_overlaps"]


def frame_overlaps(ux, uz):
    """Overlaps of the frame with its neighbors along each axis.

    Returns
    -------
    dot0 : ndarray, shape (n0 - 1, n1)
        ``u(i, j) . u(i+1, j)``
    dot1 : ndarray, shape (n0, n1 - 1)
        ``u(i, j) . u(i, j+1)``
    norm : ndarray, shape (n0, n1)
        ``u(i, j) . u(i, j)``
    """
    dot0 = ux[:-1] * ux[1:] + uz[:-1] * uz[1:]
    dot1 = ux[:, :-1] * ux[:, 1:] + uz[:, :-1] * uz[:, 1:]
    norm = ux * ux + uz * uz
    return dot0, dot1, norm


def stencil_rhs_numpy(P, C, a0p, b0p, a0m, b0m, a1p, b1p, a1m, b1m,
                      dot0, dot1, norm, c0, c1, dP, dC):
    n0, n1 = P.shape
    # axis 0 (magnet M)
    gp = a0p * P + b0p * C
    gm = a0m * P + b0m * C
    fp = a0p * C + b0p * P
    fm = a0m * C + b0m * P
    inP = np.zeros_like(P)
    inC = np.zeros_like(P)
    inP[:-1] += gp[1:]
    inP[1:] += gm[:-1]
    inC[:-1] += dot0 * fp[1:]
    inC[1:] += dot0 * fm[:-1]
    dP0 = c0 * (inP - (gp + gm))
    dC0 = c0 * (inC - norm * (fp + fm))
    # axis 1 (magnet M')
    gp = a1p * P + b1p * C
    gm = a1m * P + b1m * C
    fp = a1p * C + b1p * P
    fm = a1m * C + b1m * P
    inP = np.zeros_like(P)
    inC = np.zeros_like(P)
    inP[:, :-1] += gp[:, 1:]
    inP[:, 1:] += gm[:, :-1]
    inC[:, :-1] += dot1 * fp[:, 1:]
    inC[:, 1:] += dot1 * fm[:, :-1]
    dP[...] = dP0 + c1 * (inP - (gp + gm))
    dC[...] = dC0 + c1 * (inC - norm * (fp + fm))


@njit(cache=True)
def _stencil_numba(P, C, a0p, b0p, a0m, b0m, a1p, b1p, a1m, b1m,
                   dot0, dot1, norm, c0, c1, dP, dC):
    n0, n1 = P.shape
    for i in range(n0):
        for j in range(n1):
            # axis 0
            inP = 0.0
            inC = 0.0
            if i + 1 < n0:
                inP += a0p[i + 1, j] * P[i + 1, j] + b0p[i + 1, j] * C[i + 1, j]
                inC += dot0[i, j] * (a0p[i + 1, j] * C[i + 1, j] + b0p[i + 1, j] * P[i + 1, j])
            if i > 0:
                inP += a0m[i - 1, j] * P[i - 1, j] + b0m[i - 1, j] * C[i - 1, j]
                inC += dot0[i - 1, j] * (a0m[i - 1, j] * C[i - 1, j] + b0m[i - 1, j] * P[i - 1, j])
            gs = (a0p[i, j] * P[i, j] + b0p[i, j] * C[i, j]) + (a0m[i, j] * P[i, j] + b0m[i, j] * C[i, j])
            fs = (a0p[i, j] * C[i, j] + b0p[i, j] * P[i, j]) + (a0m[i, j] * C[i, j] + b0m[i, j] * P[i, j])
            p0 = c0 * (inP - gs)
            q0 = c0 * (inC - norm[i, j] * fs)
            # axis 1
            inP = 0.0
            inC = 0.0
            if j + 1 < n1:
                inP += a1p[i, j + 1] * P[i, j + 1] + b1p[i, j + 1] * C[i, j + 1]
                inC += dot1[i, j] * (a1p[i, j + 1] * C[i, j + 1] + b1p[i, j + 1] * P[i, j + 1])
            if j > 0:
                inP += a1m[i, j - 1] * P[i, j - 1] + b1m[i, j - 1] * C[i, j - 1]
                inC += dot1[i, j - 1] * (a1m[i, j - 1] * C[i, j - 1] + b1m[i, j - 1] * P[i, j - 1])
            gs = (a1p[i, j] * P[i, j] + b1p[i, j] * C[i, j]) + (a1m[i, j] * P[i, j] + b1m[i, j] * C[i, j])
            fs = (a1p[i, j] * C[i, j] + b1p[i, j] * P[i, j]) + (a1m[i, j] * C[i, j] + b1m[i, j] * P[i, j])
            dP[i, j] = p0 + c1 * (inP - gs)
            dC[i, j] = q0 + c1 * (inC - norm[i, j] * fs)


stencil_rhs_numba = _stencil_numba if HAVE_NUMBA else None
stencil_rhs = _stencil_numba if HAVE_NUMBA else stencil_rhs_numpy

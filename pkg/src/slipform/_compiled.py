"""Compiled per-point kernel for the local energy and its slip derivatives.

Mirrors :func:`slipform.potential.evaluate` for ``order <= 2`` without the
mixed F-derivatives; the numpy implementation stays the reference.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_THETA = 0.25
_EPS = 1e-16
_MAX_DEGREE = 16
_MAX_DLAMBDA = 1.0

EXPMAP = 0
BACKWARD_EULER = 1

# status codes
OK = 0
STEP_TOO_LARGE = 1
NONPOSITIVE_J = 2
SINGULAR = 3


@njit(cache=True, inline="always")
def _mm(A, B, out):
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]


@njit(cache=True)
def _inv3(A, out):
    det = (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
           - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
           + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))
    if det == 0.0:
        return det
    d = 1.0 / det
    out[0, 0] = (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]) * d
    out[0, 1] = (A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]) * d
    out[0, 2] = (A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]) * d
    out[1, 0] = (A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]) * d
    out[1, 1] = (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]) * d
    out[1, 2] = (A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]) * d
    out[2, 0] = (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]) * d
    out[2, 1] = (A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]) * d
    out[2, 2] = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]) * d
    return det


@njit(cache=True)
def _det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@njit(cache=True)
def _taylor_degree(norm):
    term = 1.0
    for k in range(1, _MAX_DEGREE):
        if term <= _EPS:
            return max(k, 2)
        term *= norm / k
    return _MAX_DEGREE


@njit(cache=True)
def _flow(dl, M, N, integ, order, R, dR, d2R):
    """R(dl) and its derivatives; dR (n,3,3), d2R (n,n,3,3) symmetric in (i, j)."""
    n = dl.shape[0]
    A = np.zeros((3, 3))
    for i in range(n):
        for a in range(3):
            for b in range(3):
                A[a, b] += dl[i] * M[i, a] * N[i, b]
    tmp = np.empty((3, 3))
    tmp2 = np.empty((3, 3))
    if integ == BACKWARD_EULER:
        B = np.eye(3) - A
        if _inv3(B, R) == 0.0:
            return SINGULAR
        if order >= 1:
            RM = np.empty((n, 3))  # R M_i
            NR = np.empty((n, 3))  # N_i^T R
            for i in range(n):
                for a in range(3):
                    RM[i, a] = R[a, 0] * M[i, 0] + R[a, 1] * M[i, 1] + R[a, 2] * M[i, 2]
                    NR[i, a] = N[i, 0] * R[0, a] + N[i, 1] * R[1, a] + N[i, 2] * R[2, a]
            for i in range(n):
                for a in range(3):
                    for b in range(3):
                        dR[i, a, b] = RM[i, a] * NR[i, b]
            if order >= 2:
                # R Z_i R Z_j R = (N_i . R M_j) (R M_i) (x) (N_j^T R)
                for i in range(n):
                    for j in range(i, n):
                        cij = N[i, 0] * RM[j, 0] + N[i, 1] * RM[j, 1] + N[i, 2] * RM[j, 2]
                        cji = N[j, 0] * RM[i, 0] + N[j, 1] * RM[i, 1] + N[j, 2] * RM[i, 2]
                        for a in range(3):
                            for b in range(3):
                                v = cij * RM[i, a] * NR[j, b] + cji * RM[j, a] * NR[i, b]
                                d2R[i, j, a, b] = v
                                d2R[j, i, a, b] = v
        return OK

    norm1 = 0.0
    for b in range(3):
        c = abs(A[0, b]) + abs(A[1, b]) + abs(A[2, b])
        if c > norm1:
            norm1 = c
    s = 0
    if norm1 > _THETA:
        s = int(math.ceil(math.log2(norm1 / _THETA)))
    sc = math.ldexp(1.0, -s)
    As = A * sc
    deg = _taylor_degree(norm1 * sc)
    for a in range(3):
        for b in range(3):
            R[a, b] = 1.0 if a == b else 0.0
    if order >= 1:
        dR[:] = 0.0
    if order >= 2:
        d2R[:] = 0.0
    u = np.empty((n, n, 3))
    newd = np.empty((n, 3, 3))
    for m in range(deg, 0, -1):
        inv = 1.0 / m
        if order >= 2:
            # u[i, j] = N_i^T dR_j (row vector), so dA_i dR_j = sc M_i (x) u[i, j]
            for i in range(n):
                for j in range(n):
                    for b in range(3):
                        u[i, j, b] = N[i, 0] * dR[j, 0, b] + N[i, 1] * dR[j, 1, b] + N[i, 2] * dR[j, 2, b]
            for i in range(n):
                for j in range(i, n):
                    _mm(As, d2R[i, j], tmp)
                    for a in range(3):
                        for b in range(3):
                            v = (sc * (M[i, a] * u[i, j, b] + M[j, a] * u[j, i, b]) + tmp[a, b]) * inv
                            d2R[i, j, a, b] = v
                            d2R[j, i, a, b] = v
        if order >= 1:
            for i in range(n):
                _mm(As, dR[i], tmp)
                for a in range(3):
                    for b in range(3):
                        w = N[i, 0] * R[0, b] + N[i, 1] * R[1, b] + N[i, 2] * R[2, b]
                        newd[i, a, b] = (sc * M[i, a] * w + tmp[a, b]) * inv
            dR[:] = newd
        _mm(As, R, tmp)
        for a in range(3):
            for b in range(3):
                R[a, b] = (1.0 if a == b else 0.0) + tmp[a, b] * inv

    for _ in range(s):
        if order >= 2:
            for i in range(n):
                for j in range(i, n):
                    _mm(d2R[i, j], R, tmp)
                    _mm(R, d2R[i, j], tmp2)
                    for a in range(3):
                        for b in range(3):
                            v = tmp[a, b] + tmp2[a, b]
                            for c in range(3):
                                v += dR[i, a, c] * dR[j, c, b] + dR[j, a, c] * dR[i, c, b]
                            d2R[i, j, a, b] = v
                            d2R[j, i, a, b] = v
        if order >= 1:
            for i in range(n):
                _mm(dR[i], R, tmp)
                _mm(R, dR[i], tmp2)
                for a in range(3):
                    for b in range(3):
                        newd[i, a, b] = tmp[a, b] + tmp2[a, b]
            dR[:] = newd
        _mm(R, R, tmp)
        R[:] = tmp
    return OK


@njit(cache=True)
def _point(F, Fp_prev, alpha_prev, psi_prev, s, psi_nonl, dl, M, N, kappa, mu, Q0, Qinf, H, c1,
           integ, order, rm, out_scalar, Fp, Fe, mandel, P, grad, phi, hess, hess_rm):
    n = dl.shape[0]
    for i in range(n):
        if abs(dl[i]) > _MAX_DLAMBDA:
            return STEP_TOO_LARGE
    R = np.empty((3, 3))
    dR = np.empty((n, 3, 3))
    d2R = np.empty((n, n, 3, 3))
    st = _flow(dl, M, N, integ, order, R, dR, d2R)
    if st != OK:
        return st
    _mm(R, Fp_prev, Fp)
    G = np.empty((3, 3))
    if _inv3(Fp, G) == 0.0:
        return SINGULAR
    _mm(F, G, Fe)
    J = _det3(Fe)
    if J <= 0.0:
        return NONPOSITIVE_J
    Finv = np.empty((3, 3))
    _inv3(Fe, Finv)
    lnJ = math.log(J)
    I1 = 0.0
    for a in range(3):
        for b in range(3):
            I1 += Fe[a, b] * Fe[a, b]
    cJ = J ** (-2.0 / 3.0)
    psi_e = 0.5 * kappa * lnJ * lnJ + 0.5 * mu * (cJ * I1 - 3.0)
    FinvT = Finv.T.copy()
    dev = np.empty((3, 3))
    Phat = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            dev[a, b] = Fe[a, b] - I1 / 3.0 * FinvT[a, b]
            Phat[a, b] = kappa * lnJ * FinvT[a, b] + mu * cJ * dev[a, b]
    _mm(Fe.T.copy(), Phat, mandel)
    GT = G.T.copy()
    _mm(Phat, GT, P)

    A = 0.0
    for i in range(n):
        A += alpha_prev[i] + dl[i]
    dQ = Qinf - Q0
    Q = dQ * (1.0 - math.exp(-A / H))
    psi = psi_e + dQ * (A + H * math.exp(-A / H) - H) + psi_nonl
    sdl = 0.0
    for i in range(n):
        diff = alpha_prev[i] + dl[i] - s[i]
        psi += 0.5 * c1 * diff * diff
        sdl += dl[i]
    out_scalar[0] = psi - psi_prev + Q0 * sdl
    out_scalar[1] = psi
    out_scalar[2] = Q
    for i in range(n):
        tau = 0.0
        for a in range(3):
            for b in range(3):
                tau += M[i, a] * mandel[a, b] * N[i, b]
        phi[i] = tau - (Q0 + Q + c1 * (alpha_prev[i] + dl[i] - s[i]))
    if order < 1:
        return OK

    # T_i = dFp_i G = dR_i Fp_prev G; grad_i = -mandel : T_i + local_i
    FpG = np.empty((3, 3))
    _mm(Fp_prev, G, FpG)
    T = np.empty((n, 3, 3))
    tmp = np.empty((3, 3))
    for i in range(n):
        _mm(dR[i], FpG, T[i])
        acc = 0.0
        for a in range(3):
            for b in range(3):
                acc += mandel[a, b] * T[i, a, b]
        grad[i] = -acc + Q0 + Q + c1 * (alpha_prev[i] + dl[i] - s[i])
    if order < 2:
        return OK

    # dFe_i = -F G T_i = -Fe T_i
    dFe = np.empty((n, 3, 3))
    AdFe = np.empty((n, 3, 3))
    for i in range(n):
        _mm(Fe, T[i], tmp)
        for a in range(3):
            for b in range(3):
                dFe[i, a, b] = -tmp[a, b]
    # AA : X = kappa F^-T (F^-T:X) - (kappa lnJ - mu c I1/3) F^-T X^T F^-T
    #          + mu c [X - 2/3 dev (F^-T:X) - 2/3 F^-T (Fe:X)]
    c_cross = kappa * lnJ - mu * cJ * I1 / 3.0
    t1 = np.empty((3, 3))
    t2 = np.empty((3, 3))
    for i in range(n):
        X = dFe[i]
        fx = 0.0
        ex = 0.0
        for a in range(3):
            for b in range(3):
                fx += FinvT[a, b] * X[a, b]
                ex += Fe[a, b] * X[a, b]
        _mm(FinvT, X.T.copy(), t1)
        _mm(t1, FinvT, t2)
        for a in range(3):
            for b in range(3):
                AdFe[i, a, b] = (kappa * FinvT[a, b] * fx - c_cross * t2[a, b]
                                 + mu * cJ * (X[a, b] - 2.0 / 3.0 * dev[a, b] * fx
                                              - 2.0 / 3.0 * FinvT[a, b] * ex))
    # W = F^T Phat; t_ij = W : (K_i K_j G) with K_i = G dFp_i = G T_i Fp
    W = np.empty((3, 3))
    _mm(F.T.copy(), Phat, W)
    K = np.empty((n, 3, 3))
    KG = np.empty((n, 3, 3))
    for i in range(n):
        _mm(G, T[i], tmp)
        _mm(tmp, Fp, K[i])
        _mm(K[i], G, KG[i])
    # second-derivative term: -(G^T W G^T Fp_prev^T) : d2R_ij
    _mm(GT, W, t1)
    _mm(t1, GT, t2)
    Y = np.empty((3, 3))
    _mm(t2, Fp_prev.T.copy(), Y)
    hard = dQ / H * math.exp(-A / H)
    WK = np.empty((n, 3, 3))  # W^T-contracted: (K_i^T W)
    for i in range(n):
        _mm(K[i].T.copy(), W, WK[i])
    for i in range(n):
        for j in range(i, n):
            h = 0.0
            tij = 0.0
            tji = 0.0
            y2 = 0.0
            for a in range(3):
                for b in range(3):
                    h += dFe[i, a, b] * AdFe[j, a, b]
                    # W : (K_i KG_j) = sum (K_i^T W)_mb KG_j_mb
                    tij += WK[i, a, b] * KG[j, a, b]
                    tji += WK[j, a, b] * KG[i, a, b]
                    y2 += Y[a, b] * d2R[i, j, a, b]
            v = h + tij + tji - y2 + hard
            if i == j:
                v += c1
            hess[i, j] = v
            hess[j, i] = v
    if rm:
        PhT = Phat
        FeT = Fe.T.copy()
        for j in range(n):
            # dmandel_j = dFe_j^T Phat + Fe^T AdFe_j
            _mm(dFe[j].T.copy(), PhT, t1)
            _mm(FeT, AdFe[j], t2)
            for i in range(n):
                acc = 0.0
                for a in range(3):
                    for b in range(3):
                        acc += M[i, a] * (t1[a, b] + t2[a, b]) * N[i, b]
                v = -acc + hard
                if i == j:
                    v += c1
                hess_rm[i, j] = v
    return OK


@njit(cache=True)
def evaluate_points(F, Fp_prev, alpha_prev, psi_prev, s, psi_nonl, dl, M, N, kappa, mu, Q0, Qinf, H, c1,
                    integ, order, rm, scal, Fp, Fe, mandel, P, grad, phi, hess, hess_rm, status):
    B = F.shape[0]
    for k in range(B):
        status[k] = _point(F[k], Fp_prev[k], alpha_prev[k], psi_prev[k], s[k], psi_nonl[k], dl[k], M, N,
                           kappa, mu, Q0, Qinf, H, c1, integ, order, rm, scal[k], Fp[k], Fe[k], mandel[k],
                           P[k], grad[k], phi[k], hess[k], hess_rm[k])

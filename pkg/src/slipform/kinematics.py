"""Multiplicative kinematics and plastic-flow time integration.

Two integrators map the plastic velocity-gradient increment ``dLp`` onto the
plastic deformation gradient::

    expmap:          Fp = exp(dLp) . Fp_prev
    backward_euler:  Fp = (I - dLp)^-1 . Fp_prev

:func:`flow_map` evaluates either one together with its exact first and
second derivatives with respect to the slip increments, for arrays with any
number of leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .slip_geometry import SlipCatalogue

INTEGRATORS = ("expmap", "backward_euler")

# Taylor kernel: ||A||_1 <= _THETA after scaling; the degree is the smallest
# one whose second-derivative truncation term ||A||^(m-1)/(m-1)! is below _EPS.
_THETA = 0.25
_EPS = 1e-16
_MAX_DEGREE = 16
_MAX_DLAMBDA = 1.0


class InvalidConfigurationError(ValueError):
    """A deformation gradient with non-positive determinant was produced."""


class StepTooLargeError(ValueError):
    """A plastic increment outside the accuracy regime of the integrators."""


@dataclass(frozen=True)
class DeformationState:
    F: np.ndarray
    Fp: np.ndarray
    Fe: np.ndarray
    Ce: np.ndarray
    Je: float


def plastic_flow_increment(dlambda, catalogue: SlipCatalogue) -> np.ndarray:
    """dLp = sum_i dlambda_i M_i (x) N_i (leading batch axes allowed)."""
    dlambda = np.asarray(dlambda, dtype=float)
    if dlambda.shape[-1] != catalogue.n_sys:
        raise ValueError(f"expected {catalogue.n_sys} slip increments, got {dlambda.shape[-1]}")
    return np.einsum("...i,iab->...ab", dlambda, catalogue.Z)


def _scaling_exponent(A):
    norm1 = np.abs(A).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(norm1, 1e-300) / _THETA))
    return np.maximum(s, 0).astype(int)


def _taylor_degree(norm: float) -> int:
    term = 1.0
    for k in range(1, _MAX_DEGREE):
        if term <= _EPS:
            return max(k, 2)
        term *= norm / k
    return _MAX_DEGREE


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a Taylor kernel."""
    return expm_with_derivatives(A)[0]


def expm_with_derivatives(A, directions=None, order=0):
    """exp(A) and its first/second directional derivatives.

    ``directions`` has shape (n, k, k). With ``order=1`` the derivatives
    ``D[..., i] = d/dt exp(A + t E_i)`` are returned; with ``order=2`` also
    ``D2[..., i, j] = d2/(dt ds) exp(A + t E_i + s E_j)``. The derivatives are
    those of the very polynomial-and-squaring sequence that produces exp(A),
    so they are consistent with it to rounding.
    """
    A = np.asarray(A, dtype=float)
    batch = A.shape[:-2]
    k = A.shape[-1]
    s = _scaling_exponent(A)
    scale = np.ldexp(1.0, -s)[..., None, None]
    As = A * scale
    eye = np.eye(k)

    # Derivatives live in row-major slabs so that every product is one GEMM:
    # dR as (..., k, n, k) and d2R as (..., k, n, n, k), row index first.
    R = np.broadcast_to(eye, A.shape).copy()
    dR = d2R = None
    if order >= 1:
        E = np.asarray(directions, dtype=float)
        n = E.shape[0]
        dA = np.moveaxis(E * scale[..., None, :, :], -3, -2).copy()
        dR = np.zeros(batch + (k, n, k))
    if order >= 2:
        d2R = np.zeros(batch + (k, n, n, k))

    def left(X, Y):  # X (..., k, k) times a slab
        return (X @ Y.reshape(batch + (k, -1))).reshape(Y.shape)

    def right(Y, X):  # slab times X (..., k, k)
        return (Y.reshape(batch + (-1, k)) @ X).reshape(Y.shape)

    def pair(X, Y):  # X_i Y_j for all i, j in the (..., k, n, n, k) layout
        return (X.reshape(batch + (k * n, k)) @ Y.reshape(batch + (k, n * k))).reshape(batch + (k, n, n, k))

    scaled_norm = float(np.max(np.abs(As).sum(axis=-2), initial=0.0))
    for m in range(_taylor_degree(scaled_norm), 0, -1):
        inv = 1.0 / m
        if order >= 2:
            t = pair(dA, dR)
            d2R = (t + np.swapaxes(t, -3, -2) + left(As, d2R)) * inv
        if order >= 1:
            dR = (right(dA, R) + left(As, dR)) * inv
        R = eye + (As @ R) * inv

    smax = int(s.max()) if s.size else 0
    for q in range(smax):
        active = s > q
        if not np.any(active):
            break
        Rn = R @ R
        if order >= 2:
            t = pair(dR, dR)
            d2n = right(d2R, R) + t + np.swapaxes(t, -3, -2) + left(R, d2R)
            d2R = np.where(active[..., None, None, None, None], d2n, d2R)
        if order >= 1:
            dn = right(dR, R) + left(R, dR)
            dR = np.where(active[..., None, None, None], dn, dR)
        R = np.where(active[..., None, None], Rn, R)

    if order == 0:
        return R, None, None
    dR = np.moveaxis(dR, -3, -2)
    if order == 1:
        return R, dR, None
    return R, dR, np.moveaxis(d2R, -4, -2)


def expm_frechet(A: np.ndarray, E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(A) and its Frechet derivative in direction E via the block trick.

    exp([[A, E], [0, A]]) carries exp(A) on the diagonal and L(A, E) in the
    upper-right block.
    """
    A = np.asarray(A, dtype=float)
    k = A.shape[-1]
    big = np.zeros(A.shape[:-2] + (2 * k, 2 * k))
    big[..., :k, :k] = A
    big[..., k:, k:] = A
    big[..., :k, k:] = E
    X = expm(big)
    return X[..., :k, :k], X[..., :k, k:]


def expm_taylor_reference(A: np.ndarray, terms: int = 30) -> np.ndarray:
    """Plain truncated Taylor series, kept only as an independent oracle."""
    A = np.asarray(A, dtype=float)
    out = np.eye(A.shape[-1])
    P = np.eye(A.shape[-1])
    for k in range(1, terms + 1):
        P = P @ A
        out = out + P / factorial(k)
    return out


def _check_step(dlambda):
    if np.any(np.abs(dlambda) > _MAX_DLAMBDA):
        raise StepTooLargeError(f"slip increment exceeds {_MAX_DLAMBDA} in a single step")


def update_fp_expmap(dLp: np.ndarray, Fp_prev: np.ndarray) -> np.ndarray:
    return expm(dLp) @ Fp_prev


def update_fp_backward_euler(dLp: np.ndarray, Fp_prev: np.ndarray) -> np.ndarray:
    """Fully implicit update Fp = Fp_prev + dLp . Fp, without isochoric projection."""
    k = dLp.shape[-1]
    try:
        B = np.linalg.inv(np.eye(k) - dLp)
    except np.linalg.LinAlgError:
        raise StepTooLargeError("I - dLp is singular") from None
    return B @ Fp_prev


def flow_map(dlambda, Fp_prev, catalogue: SlipCatalogue, integrator="expmap", order=1):
    """Fp(dlambda) with derivatives dFp (..., n, 3, 3) and d2Fp (..., n, n, 3, 3)."""
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    dlambda = np.asarray(dlambda, dtype=float)
    _check_step(dlambda)
    Z = catalogue.Z
    dLp = plastic_flow_increment(dlambda, catalogue)
    Fp_prev = np.asarray(Fp_prev, dtype=float)

    if integrator == "expmap":
        R, dR, d2R = expm_with_derivatives(dLp, Z, order)
    else:
        try:
            R = np.linalg.inv(np.eye(3) - dLp)
        except np.linalg.LinAlgError:
            raise StepTooLargeError("I - dLp is singular") from None
        dR = d2R = None
        if order >= 1:
            RZ = R[..., None, :, :] @ Z  # (..., n, 3, 3)
            dR = RZ @ R[..., None, :, :]
        if order >= 2:
            t = RZ[..., :, None, :, :] @ dR[..., None, :, :, :]
            d2R = t + np.swapaxes(t, -3, -4)

    Fp = R @ Fp_prev
    dFp = dR @ Fp_prev[..., None, :, :] if order >= 1 else None
    d2Fp = d2R @ Fp_prev[..., None, None, :, :] if order >= 2 else None
    return Fp, dFp, d2Fp


def dFp_ddlambda(i: int, dLp, Fp_prev, catalogue: SlipCatalogue, integrator="expmap") -> np.ndarray:
    """dFp/d(dlambda_i) at a given plastic increment, one system at a time.

    Uses the block-matrix Frechet derivative for the exponential map and the
    closed form (I - dLp)^-1 Z_i (I - dLp)^-1 Fp_prev for backward Euler.
    """
    Zi = catalogue.Z[i]
    if integrator == "expmap":
        _, L = expm_frechet(dLp, Zi)
        return L @ Fp_prev
    if integrator == "backward_euler":
        B = np.linalg.inv(np.eye(3) - dLp)
        return B @ Zi @ B @ Fp_prev
    raise ValueError(f"unknown integrator {integrator!r}")


def elastic_measures(F, Fp) -> DeformationState:
    F = np.asarray(F, dtype=float)
    Fp = np.asarray(Fp, dtype=float)
    if np.linalg.det(F) <= 0.0 or np.linalg.det(Fp) <= 0.0:
        raise InvalidConfigurationError("deformation gradients must have positive determinant")
    Fe = F @ np.linalg.inv(Fp)
    Je = float(np.linalg.det(Fe))
    if Je <= 0.0:
        raise InvalidConfigurationError("elastic part has non-positive determinant")
    return DeformationState(F, Fp, Fe, Fe.T @ Fe, Je)

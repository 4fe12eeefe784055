"""Helmholtz energies, stresses and yield functions.

Units: stresses and energy densities in GPa, lengths in micrometres. The
gradient modulus ``c2`` is stored in GPa*um^2 (see :data:`C2_MPA_M_TO_GPA_UM2`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .slip_geometry import SlipCatalogue

# Material constants in config files carry c2 in MPa*m. Values are mapped to
# GPa*um^2 with this factor (1 MPa*m = 1e3 GPa*um, times a 1 um reference
# length so that 0.5*c2*|grad s|^2 is an energy density in GPa).
C2_MPA_M_TO_GPA_UM2 = 1.0e3


@dataclass(frozen=True)
class MaterialParams:
    kappa: float = 49.98
    mu: float = 21.1
    Q0: float = 0.06
    Qinf: float = 0.06
    H: float = 1.0
    c1: float = 0.0
    c2: float = 0.0  # GPa*um^2

    def __post_init__(self):
        if not (self.kappa > 0 and self.mu > 0 and self.Q0 > 0):
            raise ValueError("kappa, mu and Q0 must be positive")
        if self.Qinf < self.Q0:
            raise ValueError("Qinf must not be smaller than Q0")
        if not self.H > 0:
            raise ValueError("H must be positive")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("c1 and c2 must be nonnegative")


@dataclass
class InternalState:
    alpha: np.ndarray

    @property
    def A(self) -> float:
        return float(np.sum(self.alpha))


@dataclass
class MicromorphicPoint:
    """Micromorphic slack values and their reference gradients (n, 3)."""

    s: np.ndarray
    grad_s: np.ndarray

    @classmethod
    def zeros(cls, n_sys: int) -> "MicromorphicPoint":
        return cls(np.zeros(n_sys), np.zeros((n_sys, 3)))


def _check_spd(Ce):
    Ce = np.asarray(Ce, dtype=float)
    if not np.allclose(Ce, np.swapaxes(Ce, -1, -2), rtol=1e-12, atol=1e-14):
        raise ValueError("C^e must be symmetric")
    if np.any(np.linalg.eigvalsh(Ce) <= 0.0):
        raise ValueError("C^e must be positive definite")
    return Ce


def psi_elastic(Ce, params: MaterialParams):
    """0.5 kappa (ln Je)^2 + 0.5 mu (tr(Je^-2/3 Ce) - 3)."""
    Ce = _check_spd(Ce)
    detC = np.linalg.det(Ce)
    lnJ = 0.5 * np.log(detC)
    trC = np.trace(Ce, axis1=-2, axis2=-1)
    return 0.5 * params.kappa * lnJ**2 + 0.5 * params.mu * (detC ** (-1.0 / 3.0) * trC - 3.0)


def mandel_stress(Ce, params: MaterialParams):
    """Sigma = 2 Ce . dPsi/dCe, symmetric for this isotropic energy."""
    Ce = _check_spd(Ce)
    detC = np.linalg.det(Ce)
    lnJ = 0.5 * np.log(detC)
    trC = np.trace(Ce, axis1=-2, axis2=-1)
    I = np.eye(3)
    c = detC ** (-1.0 / 3.0)
    return (params.kappa * lnJ)[..., None, None] * I + (params.mu * c)[..., None, None] * (
        Ce - (trC / 3.0)[..., None, None] * I
    )


def elastic_response(Fe, params: MaterialParams, tangent=False):
    """Energy, dPsi/dFe and (optionally) d2Psi/dFe2 as functions of Fe.

    Leading batch axes are allowed. Returns ``(psi, Phat, AA)`` where
    ``AA[..., k, l, m, n] = d2 psi / dFe_kl dFe_mn``.
    """
    Fe = np.asarray(Fe, dtype=float)
    J = np.linalg.det(Fe)
    if np.any(J <= 0.0):
        raise ValueError("elastic deformation with non-positive determinant")
    Finv = np.linalg.inv(Fe)
    FinvT = np.swapaxes(Finv, -1, -2)
    lnJ = np.log(J)
    I1 = np.einsum("...ab,...ab->...", Fe, Fe)
    c = J ** (-2.0 / 3.0)
    kappa, mu = params.kappa, params.mu

    psi = 0.5 * kappa * lnJ**2 + 0.5 * mu * (c * I1 - 3.0)
    dev = Fe - (I1 / 3.0)[..., None, None] * FinvT
    Phat = (kappa * lnJ)[..., None, None] * FinvT + (mu * c)[..., None, None] * dev
    if not tangent:
        return psi, Phat, None

    # d(F^-T)_kl / dF_mn = -Finv_lm Finv_nk
    dFinvT = -np.einsum("...lm,...nk->...klmn", Finv, Finv)
    eye4 = np.einsum("km,ln->klmn", np.eye(3), np.eye(3))
    x = lambda a, b: a[..., :, :, None, None] * b[..., None, None, :, :]
    AA = (
        kappa * x(FinvT, FinvT)
        + (kappa * lnJ)[..., None, None, None, None] * dFinvT
        + (mu * c)[..., None, None, None, None]
        * (
            eye4
            - (2.0 / 3.0) * x(dev, FinvT)
            - (2.0 / 3.0) * x(FinvT, Fe)
            - (I1 / 3.0)[..., None, None, None, None] * dFinvT
        )
    )
    return psi, Phat, AA


def first_piola(F, Fp, params: MaterialParams):
    """P = dPsi^e/dF = Phat . Fp^-T with Phat = dPsi^e/dFe."""
    Fpinv = np.linalg.inv(np.asarray(Fp, dtype=float))
    _, Phat, _ = elastic_response(np.asarray(F) @ Fpinv, params)
    return Phat @ np.swapaxes(Fpinv, -1, -2)


def kirchhoff_stress(P, F):
    return np.asarray(P) @ np.swapaxes(np.asarray(F), -1, -2)


def hardening_energy(A, params: MaterialParams):
    A = np.asarray(A, dtype=float)
    return (params.Qinf - params.Q0) * (A + params.H * np.exp(-A / params.H) - params.H)


def hardening_stress(A, params: MaterialParams):
    """Q(A) = (Qinf - Q0)(1 - exp(-A/H)), the derivative of the hardening energy."""
    A = np.asarray(A, dtype=float)
    if np.any(A < 0.0):
        raise ValueError("accumulated slip must be nonnegative")
    return (params.Qinf - params.Q0) * (1.0 - np.exp(-A / params.H))


def hardening_modulus(A, params: MaterialParams):
    A = np.asarray(A, dtype=float)
    return (params.Qinf - params.Q0) / params.H * np.exp(-A / params.H)


def yield_function(tau, Q, params: MaterialParams):
    """One-sided yield function tau - (Q0 + Q)."""
    return np.asarray(tau) - (params.Q0 + np.asarray(Q))


def reference_slip_directions(catalogue: SlipCatalogue, Fp_init=None) -> np.ndarray:
    """Slip directions pulled back to the reference frame by the initial orientation."""
    if Fp_init is None:
        return np.array(catalogue.M)
    return np.einsum("ab,ib->ia", np.linalg.inv(Fp_init), catalogue.M)


def psi_micromorphic(alpha, point: MicromorphicPoint, catalogue: SlipCatalogue,
                     params: MaterialParams, directions=None):
    """Penalty energy 0.5 c1 sum (alpha - s)^2 and gradient energy 0.5 c2 sum (grad s . m)^2.

    ``directions`` are the slip directions in the frame of ``grad_s``; the
    catalogue directions are used when omitted.
    """
    alpha = np.asarray(alpha, dtype=float)
    s = np.asarray(point.s, dtype=float)
    g = np.asarray(point.grad_s, dtype=float)
    n = catalogue.n_sys
    if alpha.shape[-1] != n or s.shape[-1] != n or g.shape[-2:] != (n, 3):
        raise ValueError("micromorphic data does not match the catalogue size")
    m = catalogue.M if directions is None else np.asarray(directions)
    pen = 0.5 * params.c1 * np.sum((alpha - s) ** 2, axis=-1)
    proj = np.einsum("...ia,ia->...i", g, m)
    nonl = 0.5 * params.c2 * np.sum(proj**2, axis=-1)
    return pen, nonl

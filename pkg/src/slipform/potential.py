"""Volume-specific incremental energy and its derivatives in the slip increments.

For a prescribed deformation gradient ``F`` and the converged state of the
previous step, the local energy reads::

    i_inc(dl) = Psi(F, Fp(dl), alpha_prev + dl, s, grad s) - Psi_prev + Q0 * sum(dl)

Everything here accepts arrays with leading batch axes, so a finite-element
layer can evaluate all quadrature points at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _compiled, kinematics
from .material import MaterialParams, elastic_response
from .slip_geometry import SlipCatalogue


@dataclass
class CrystalState:
    """Converged state at the end of a step (possibly batched).

    ``psi`` caches the total free energy of that state, so ``i_inc`` is exactly
    zero for an unchanged deformation and zero slip.
    """

    F: np.ndarray
    Fp: np.ndarray
    alpha: np.ndarray
    s: np.ndarray
    grad_s: np.ndarray
    psi: np.ndarray

    @property
    def A(self):
        return np.sum(self.alpha, axis=-1)


def free_energy(F, Fp, alpha, s, grad_s, params: MaterialParams, directions) -> np.ndarray:
    Fe = np.asarray(F) @ np.linalg.inv(Fp)
    psi_e, _, _ = elastic_response(Fe, params)
    A = np.sum(alpha, axis=-1)
    proj = np.einsum("...ia,ia->...i", grad_s, directions)
    return (
        psi_e
        + _psi_p(A, params)
        + 0.5 * params.c1 * np.sum((np.asarray(alpha) - s) ** 2, axis=-1)
        + 0.5 * params.c2 * np.sum(proj**2, axis=-1)
    )


def initial_state(catalogue: SlipCatalogue, params: MaterialParams, Fp0=None, batch=(),
                  directions=None) -> CrystalState:
    n = catalogue.n_sys
    Fp0 = np.eye(3) if Fp0 is None else np.asarray(Fp0, dtype=float)
    F = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    Fp = np.broadcast_to(Fp0, batch + (3, 3)).copy()
    alpha = np.zeros(batch + (n,))
    s = np.zeros(batch + (n,))
    grad_s = np.zeros(batch + (n, 3))
    d = catalogue.M if directions is None else directions
    return CrystalState(F, Fp, alpha, s, grad_s, free_energy(F, Fp, alpha, s, grad_s, params, d))


@dataclass
class StepContext:
    """Everything the local problem of one step depends on.

    ``s`` and ``grad_s`` are the micromorphic values at the current time;
    ``directions`` are the slip directions used in the gradient energy.
    """

    F: np.ndarray
    prev: CrystalState
    params: MaterialParams
    catalogue: SlipCatalogue
    integrator: str = "expmap"
    s: np.ndarray | None = None
    grad_s: np.ndarray | None = None
    directions: np.ndarray | None = None

    def __post_init__(self):
        if self.integrator not in kinematics.INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.s is None:
            self.s = self.prev.s
        if self.grad_s is None:
            self.grad_s = self.prev.grad_s
        if self.directions is None:
            self.directions = self.catalogue.M

    @property
    def n_sys(self) -> int:
        return self.catalogue.n_sys

    def take(self, idx) -> "StepContext":
        """Sub-batch along the leading axis."""
        p = self.prev
        prev = CrystalState(p.F[idx], p.Fp[idx], p.alpha[idx], p.s[idx], p.grad_s[idx], p.psi[idx])
        return replace(self, F=self.F[idx], prev=prev, s=self.s[idx], grad_s=self.grad_s[idx])


@dataclass
class Evaluation:
    """Result of :func:`evaluate`; derivative fields are None unless requested."""

    energy: np.ndarray
    psi: np.ndarray
    Fp: np.ndarray
    Fe: np.ndarray
    mandel: np.ndarray
    P: np.ndarray
    alpha: np.ndarray
    Q: np.ndarray
    phi_nonl: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    hess_rm: np.ndarray | None = None
    dP_dF: np.ndarray | None = None
    dgrad_dF: np.ndarray | None = None
    drm_dF: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def grad_rm(self) -> np.ndarray:
        """The return-mapping counterpart of ``grad``: minus the yield function."""
        return -self.phi_nonl


def _psi_p(A, params):
    return (params.Qinf - params.Q0) * (A + params.H * np.exp(-A / params.H) - params.H)


def _q(A, params):
    return (params.Qinf - params.Q0) * (1.0 - np.exp(-A / params.H))


def _dq(A, params):
    return (params.Qinf - params.Q0) / params.H * np.exp(-A / params.H)


# "compiled" routes energies, slip derivatives and stresses through the
# per-point kernel (mixed derivatives still come from the numpy code below);
# "numpy" always uses the vectorized reference.
BACKENDS = ("compiled", "numpy")
default_backend = "compiled"


def evaluate(ctx: StepContext, dlambda, order: int = 1, return_mapping: bool = False,
             mixed: bool = False, backend: str | None = None) -> Evaluation:
    """Energy, stresses and derivatives of ``i_inc`` at ``dlambda``.

    ``order`` 1 adds the gradient, 2 the Hessian (and with ``return_mapping``
    the Jacobian of minus the yield functions). ``mixed`` adds the derivatives
    with respect to F needed by a consistent finite-element tangent.
    """
    backend = backend or default_backend
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "compiled":
        ev = _evaluate_compiled(ctx, dlambda, order, return_mapping)
        if mixed:
            ref = evaluate(ctx, dlambda, order=0, mixed=True, backend="numpy")
            ev.dP_dF, ev.dgrad_dF, ev.drm_dF = ref.dP_dF, ref.dgrad_dF, ref.drm_dF
        return ev
    params, cat = ctx.params, ctx.catalogue
    dl = np.asarray(dlambda, dtype=float)
    Z = cat.Z
    n = cat.n_sys
    need_AA = order >= 2 or mixed
    fp_order = max(order, 1 if mixed else 0)

    Fp, dFp, d2Fp = kinematics.flow_map(dl, ctx.prev.Fp, cat, ctx.integrator, fp_order)
    F = np.asarray(ctx.F, dtype=float)
    G = np.linalg.inv(Fp)
    Fe = F @ G
    psi_e, Phat, AA = elastic_response(Fe, params, tangent=need_AA)
    GT = np.swapaxes(G, -1, -2)
    mandel = np.swapaxes(Fe, -1, -2) @ Phat
    P = Phat @ GT

    alpha = ctx.prev.alpha + dl
    A = np.sum(alpha, axis=-1)
    Q = _q(A, params)
    diff = alpha - ctx.s
    proj = np.einsum("...ia,ia->...i", ctx.grad_s, ctx.directions)
    psi = (
        psi_e
        + _psi_p(A, params)
        + 0.5 * params.c1 * np.sum(diff**2, axis=-1)
        + 0.5 * params.c2 * np.sum(proj**2, axis=-1)
    )
    energy = psi - ctx.prev.psi + params.Q0 * np.sum(dl, axis=-1)
    tau = np.einsum("...ab,iab->...i", mandel, Z)
    local = params.Q0 + Q[..., None] + params.c1 * diff
    phi_nonl = tau - local

    ev = Evaluation(energy, psi, Fp, Fe, mandel, P, alpha, Q, phi_nonl)
    if order < 1 and not mixed:
        return ev

    T = dFp @ G[..., None, :, :]  # dFp_i . Fp^-1
    if order >= 1:
        ev.grad = -np.einsum("...ab,...iab->...i", mandel, T) + local

    dG = -G[..., None, :, :] @ T  # (..., n, 3, 3)
    dFe = F[..., None, :, :] @ dG

    if order >= 2:
        eye_n = np.eye(n)
        hard = _dq(A, params)[..., None, None] * np.ones((n, n)) + params.c1 * eye_n
        AdFe = np.einsum("...klmn,...jmn->...jkl", AA, dFe)
        H = np.einsum("...ikl,...jkl->...ij", dFe, AdFe)
        W = np.swapaxes(F, -1, -2) @ Phat
        K = G[..., None, :, :] @ dFp
        KG = K @ G[..., None, :, :]
        t = np.einsum("...kl,...ikm,...jml->...ij", W, K, KG)
        H = H + t + np.swapaxes(t, -1, -2)
        H = H - np.einsum("...mn,...ijmn->...ij", GT @ W @ GT, d2Fp)
        ev.hess = H + hard
        if return_mapping:
            dmandel = np.swapaxes(dFe, -1, -2) @ Phat[..., None, :, :] + np.swapaxes(Fe, -1, -2)[..., None, :, :] @ AdFe
            ev.hess_rm = -np.einsum("iab,...jab->...ij", Z, dmandel) + hard

    if mixed:
        B = F.shape[:-2]
        # AA contracted with G on its last index: dPhat_ac / dF_pr
        AG = (AA @ GT[..., None, None, :, :]).reshape(B + (9, 9))
        # P = Phat G^T, contract c against G_bc
        t = np.swapaxes(AG.reshape(B + (3, 3, 9)), -1, -2) @ GT[..., None, :, :]  # (a, pr, b)
        ev.dP_dF = np.swapaxes(t, -1, -2).reshape(B + (3, 3, 3, 3))
        dFe9 = dFe.reshape(B + (n, 9))
        ev.dgrad_dF = (dFe9 @ AG).reshape(B + (n, 3, 3)) + Phat[..., None, :, :] @ np.swapaxes(dG, -1, -2)
        W = (Fe[..., None, :, :] @ Z).reshape(B + (n, 9))
        ev.drm_dF = -(np.swapaxes(G[..., None, :, :] @ Z @ np.swapaxes(Phat, -1, -2)[..., None, :, :], -1, -2)
                      + (W @ AG).reshape(B + (n, 3, 3)))
    return ev


_STATUS_ERRORS = {
    _compiled.STEP_TOO_LARGE: (kinematics.StepTooLargeError, "slip increment exceeds 1.0 in a single step"),
    _compiled.NONPOSITIVE_J: (ValueError, "elastic deformation with non-positive determinant"),
    _compiled.SINGULAR: (kinematics.StepTooLargeError, "singular plastic update"),
}


def _evaluate_compiled(ctx: StepContext, dlambda, order, return_mapping) -> Evaluation:
    params, cat = ctx.params, ctx.catalogue
    n = cat.n_sys
    dl = np.asarray(dlambda, dtype=float)
    F = np.asarray(ctx.F, dtype=float)
    batch = np.broadcast_shapes(dl.shape[:-1], F.shape[:-2], ctx.prev.Fp.shape[:-2])
    B = int(np.prod(batch))

    def flat(x, tail):
        x = np.asarray(x, dtype=float)
        if x.shape != batch + tail:
            x = np.broadcast_to(x, batch + tail)
        return np.ascontiguousarray(x).reshape((B,) + tail)

    if params.c2 == 0.0:
        psi_nonl = np.zeros(batch)
    else:
        proj = np.einsum("...ia,ia->...i", ctx.grad_s, ctx.directions)
        psi_nonl = 0.5 * params.c2 * np.sum(proj**2, axis=-1)
    scal = np.empty((B, 3))
    Fp = np.empty((B, 3, 3))
    Fe = np.empty((B, 3, 3))
    mandel = np.empty((B, 3, 3))
    P = np.empty((B, 3, 3))
    grad = np.empty((B, n))
    phi = np.empty((B, n))
    hess = np.empty((B, n, n)) if order >= 2 else np.empty((B, 0, 0))
    hess_rm = np.empty((B, n, n)) if order >= 2 and return_mapping else np.empty((B, 0, 0))
    status = np.zeros(B, dtype=np.int64)
    integ = _compiled.EXPMAP if ctx.integrator == "expmap" else _compiled.BACKWARD_EULER
    _compiled.evaluate_points(
        flat(F, (3, 3)), flat(ctx.prev.Fp, (3, 3)), flat(ctx.prev.alpha, (n,)), flat(ctx.prev.psi, ()),
        flat(ctx.s, (n,)), flat(psi_nonl, ()), flat(dl, (n,)), cat.M, cat.N,
        params.kappa, params.mu, params.Q0, params.Qinf, params.H, params.c1,
        integ, int(order), bool(return_mapping and order >= 2),
        scal, Fp, Fe, mandel, P, grad, phi, hess, hess_rm, status)
    bad = status[status != 0]
    if bad.size:
        cls, msg = _STATUS_ERRORS[int(bad[0])]
        raise cls(msg)

    def shaped(x):
        return x.reshape(batch + x.shape[1:])

    alpha = np.broadcast_to(ctx.prev.alpha, batch + (n,)) + np.broadcast_to(dl, batch + (n,))
    ev = Evaluation(shaped(scal[:, 0]), shaped(scal[:, 1]), shaped(Fp), shaped(Fe), shaped(mandel), shaped(P),
                    alpha, shaped(scal[:, 2]), shaped(phi))
    if order >= 1:
        ev.grad = shaped(grad)
    if order >= 2:
        ev.hess = shaped(hess)
        if return_mapping:
            ev.hess_rm = shaped(hess_rm)
    return ev


def i_inc(ctx: StepContext, dlambda) -> np.ndarray:
    return evaluate(ctx, dlambda, order=0).energy


def d_i_inc(ctx: StepContext, dlambda) -> np.ndarray:
    return evaluate(ctx, dlambda, order=1).grad


def d2_i_inc(ctx: StepContext, dlambda) -> np.ndarray:
    return evaluate(ctx, dlambda, order=2).hess


def commit(ctx: StepContext, dlambda, ev: Evaluation | None = None) -> CrystalState:
    """Converged state after accepting ``dlambda`` for this step."""
    if ev is None:
        ev = evaluate(ctx, dlambda, order=0)
    return CrystalState(np.array(ctx.F, dtype=float), ev.Fp, ev.alpha, np.array(ctx.s),
                        np.array(ctx.grad_s), ev.psi)


def consistency_residual(ctx: StepContext, dlambda) -> float:
    """max_i |d i_inc/d dlambda_i + phi_i^nonl|, the finite-step yield-function error."""
    ev = evaluate(ctx, dlambda, order=1)
    return float(np.max(np.abs(ev.grad + ev.phi_nonl)))


def consistency_limit_check(residuals, step_sizes) -> float:
    """Observed order of decay of consistency residuals under step refinement.

    Least-squares slope of log(residual) against log(step size). Residuals that
    are zero to rounding (exact cases) report an infinite order.
    """
    r = np.asarray(residuals, dtype=float)
    h = np.asarray(step_sizes, dtype=float)
    if np.all(r <= 1e-14):
        return float("inf")
    slope, _ = np.polyfit(np.log(h), np.log(np.maximum(r, 1e-300)), 1)
    return float(slope)

"""Local solvers for the slip increments of one load step.

All four algorithms run the same undamped Newton iteration on a
nonsmooth reformulation ``G(dlambda) = 0`` of the complementarity problem

    dlambda >= 0,   a(dlambda) >= 0,   dlambda . a(dlambda) = 0

where ``a`` is the derivative of the incremental energy (or minus the yield
functions for the return-mapping variant):

==================== ===================================================
fb_variational       sqrt((w dl)^2 + a^2 + 2 delta) - w dl - a
min_ncp_variational  min(a, dl)
auglag_variational   dl - max(0, m - rho a), outer update of m and rho
fb_return_mapping    Fischer-Burmeister with a = -phi
==================== ===================================================

The Newton core works on a batch of material points at once; the
``solve_*`` functions are single-point front ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import StepTooLargeError
from .potential import CrystalState, Evaluation, StepContext, evaluate

ALGORITHMS = ("fb_variational", "min_ncp_variational", "auglag_variational", "fb_return_mapping")

# Slip increments above this count as active in diagnostics.
ACTIVE_THRESHOLD = 1e-8
# Min-NCP iterates with a slip below this are not accepted as converged.
_FEASIBILITY = -1e-12
# Overshoot below this triggers the projection fallback.
_CLAMP_TRIGGER = -0.1
# Iterations without a new best residual after which a rescue is started.
_STAGNATION = 8
# Longest trial step (in slip) of the energy-minimization fallback.
_MAX_SEARCH_STEP = 0.05


class NonConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConditioningError(NonConvergenceError):
    """The Newton matrix could not be factorized."""


@dataclass(frozen=True)
class SolverParams:
    """Solver settings; ``w`` and ``newton_tol`` default to multiples of mu."""

    algorithm: str = "fb_variational"
    w: float | None = None
    delta: float = 1e-10
    penalty_hat: float = 1.0
    penalty_growth: float = 10.0
    penalty_cap: float = 1e6
    newton_tol: float | None = None
    max_newton: int = 50
    max_outer_al: int = 30
    outer_tol: float = 1e-8
    globalize: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.w is not None and not self.w > 0:
            raise ValueError("w must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not self.penalty_hat > 0:
            raise ValueError("penalty_hat must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.newton_tol is not None and not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton < 1 or self.max_outer_al < 1:
            raise ValueError("iteration limits must be positive")

    def resolve(self, mu: float) -> "SolverParams":
        """Copy with the mu-dependent defaults filled in."""
        return replace(
            self,
            w=mu if self.w is None else self.w,
            newton_tol=1e-10 * mu if self.newton_tol is None else self.newton_tol,
        )


@dataclass
class SolveDiagnostics:
    newton_iterations: int = 0
    outer_iterations: int = 0
    condition_numbers: list = field(default_factory=list)
    kkt_residual: float = float("nan")
    active_set: tuple = ()
    converged: bool = False
    clamped: int = 0
    rescued: bool = False
    transcript: list | None = None


@dataclass
class BatchResult:
    """Converged increments of a batch with what a consistent tangent needs.

    ``jacobian`` is dG/d(dlambda) at the root and ``dG_da`` the diagonal of
    dG/da, so that d(dlambda) = -jacobian^-1 (dG_da * da) for a perturbation
    ``da`` of the driving force at fixed slip.
    """

    dlambda: np.ndarray
    evaluation: Evaluation
    jacobian: np.ndarray
    dG_da: np.ndarray
    newton_iterations: np.ndarray
    outer_iterations: np.ndarray


def condition_estimate(J) -> float:
    """2-norm condition number; inf for a singular matrix."""
    sv = np.linalg.svd(np.asarray(J, dtype=float), compute_uv=False)
    if sv[-1] == 0.0 or not np.all(np.isfinite(sv)):
        return float("inf")
    return float(sv[0] / sv[-1])


def _cond_batch(J):
    sv = np.linalg.svd(J, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = sv[..., 0] / sv[..., -1]
    return np.where(np.isfinite(c), c, np.inf)


def driving_force(ev: Evaluation, return_mapping: bool) -> np.ndarray:
    return ev.grad_rm if return_mapping else ev.grad


def _fb_parts(dl, a, w, delta):
    r = np.sqrt((w * dl) ** 2 + a**2 + 2.0 * delta)
    G = r - w * dl - a
    pos = r > 0.0
    rs = np.where(pos, r, 1.0)
    # at r = 0 (delta = 0, dl = a = 0) pick the generalized-Jacobian element (-w, -1)
    d_dl = np.where(pos, w * (w * dl / rs - 1.0), -w)
    d_a = np.where(pos, a / rs - 1.0, -1.0)
    return G, d_dl, d_a


def _system(kind, dl, ev, p: SolverParams, m=None, rho=None):
    """Residual, Jacobian and dG/da for the batch (B, n)."""
    n = dl.shape[-1]
    eye = np.eye(n)
    if kind in ("fb_variational", "fb_return_mapping"):
        rm = kind == "fb_return_mapping"
        a = driving_force(ev, rm)
        H = ev.hess_rm if rm else ev.hess
        G, d_dl, d_a = _fb_parts(dl, a, p.w, p.delta)
        J = d_dl[..., :, None] * eye + d_a[..., :, None] * H
        return G, J, d_a, a
    a = ev.grad
    H = ev.hess
    if kind == "min_ncp_variational":
        act = a <= dl
        G = np.where(act, a, dl)
        J = np.where(act[..., :, None], H, eye)
        return G, J, act.astype(float), a
    t = m - rho[..., None] * a
    on = t > 0.0
    G = dl - np.where(on, t, 0.0)
    J = eye + np.where(on[..., :, None], rho[..., None, None] * H, 0.0)
    return G, J, rho[..., None] * on, a


def _take(ctx: StepContext, idx, n_all):
    return ctx if len(idx) == n_all else ctx.take(idx)


class _SweepError(Exception):
    pass


@dataclass
class _Run:
    """Per-point bookkeeping of a batched Newton iteration."""

    dl: np.ndarray
    iters: np.ndarray
    clamped: np.ndarray
    failed: np.ndarray
    singular: np.ndarray
    conds: list | None
    trans: list | None
    best: np.ndarray
    stale: np.ndarray
    ends_only: bool = False

    @classmethod
    def start(cls, dl0, record, transcript):
        B = dl0.shape[0]
        return cls(dl0.copy(), np.zeros(B, dtype=int), np.zeros(B, dtype=int), np.zeros(B, dtype=bool),
                   np.zeros(B, dtype=bool), [[] for _ in range(B)] if record else None,
                   [[] for _ in range(B)] if transcript else None, np.full(B, np.inf), np.zeros(B, dtype=int),
                   record == "ends")

    def absorb(self, k, other: "_Run"):
        """Copy the single-point run ``other`` into slot ``k``."""
        self.dl[k] = other.dl[0]
        self.iters[k] = other.iters[0]
        self.clamped[k] += other.clamped[0]
        self.failed[k] = other.failed[0]
        self.singular[k] = other.singular[0]
        if self.conds is not None:
            self.conds[k].extend(other.conds[0])
        if self.trans is not None:
            self.trans[k].extend(other.trans[0])


def _sweep(ctx, p, kind, tol, m, rho, run: _Run, pending):
    """One Newton update for the pending points; returns the still-pending ones."""
    B = run.dl.shape[0]
    sub = _take(ctx, pending, B)
    rm = kind == "fb_return_mapping"
    try:
        ev = evaluate(sub, run.dl[pending], order=2, return_mapping=rm)
    except (StepTooLargeError, ValueError, np.linalg.LinAlgError) as exc:
        raise _SweepError from exc
    G, J, _, a = _system(kind, run.dl[pending], ev, p,
                         None if m is None else m[pending], None if rho is None else rho[pending])
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(J))):
        raise _SweepError
    gnorm = np.max(np.abs(G), axis=-1)
    done = gnorm <= tol
    if kind == "min_ncp_variational":
        # |min(a, dl)| <= tol admits dl ~ -tol on degenerate systems
        done &= np.min(run.dl[pending], axis=-1) >= _FEASIBILITY
    if run.conds is not None:
        sel = (done | (run.iters[pending] == 0)) if run.ends_only else np.ones(len(pending), dtype=bool)
        if np.any(sel):
            for k, c in zip(pending[sel], _cond_batch(J[sel])):
                run.conds[k].append(float(c))
    over = ~done & (run.iters[pending] >= p.max_newton)
    if p.globalize:
        improved = gnorm < run.best[pending]
        run.best[pending] = np.where(improved, gnorm, run.best[pending])
        run.stale[pending] = np.where(improved, 0, run.stale[pending] + 1)
        over |= ~done & (run.stale[pending] >= _STAGNATION)
    run.failed[pending[over]] = True
    go = ~done & ~over
    if not np.any(go):
        return pending[:0]
    idx = pending[go]
    try:
        if kind == "min_ncp_variational":
            step = _active_block_step(G[go], J[go], a[go] <= run.dl[idx], run.dl[idx])
        else:
            step = np.linalg.solve(J[go], -G[go][..., None])[..., 0]
    except np.linalg.LinAlgError:
        if idx.size == 1:
            run.failed[idx] = run.singular[idx] = True
            return pending[:0]
        raise _SweepError from None
    new = run.dl[idx] + step
    low = np.any(new < _CLAMP_TRIGGER, axis=-1)
    if np.any(low):
        new[low] = np.maximum(new[low], 0.0)
        run.clamped[idx[low]] += 1
    if run.trans is not None:
        act = a[go] <= run.dl[idx]  # partition that built this step
        for j, k in enumerate(idx):
            run.trans[k].append((tuple(np.flatnonzero(act[j]).tolist()), new[j].copy()))
    run.dl[idx] = new
    run.iters[idx] += 1
    return idx


def _active_block_step(G, J, act, dl):
    """Newton step of the min reformulation with the identity rows eliminated.

    Inactive components step to zero exactly; only the active block of the
    Hessian is factorized.
    """
    step = np.empty_like(dl)
    for k in range(dl.shape[0]):
        A = act[k]
        I = ~A
        d = step[k]
        d[I] = -dl[k, I]
        if np.any(A):
            rhs = -G[k, A] - J[k][np.ix_(A, I)] @ d[I]
            d[A] = np.linalg.solve(J[k][np.ix_(A, A)], rhs)
    return step


def _newton(ctx, p, kind, dl0, tol, m=None, rho=None, record=False, transcript=False) -> _Run:
    """Batched undamped Newton; failures are flagged per point, not raised."""
    B = dl0.shape[0]
    run = _Run.start(dl0, record, transcript)
    pending = np.arange(B)
    while pending.size:
        try:
            pending = _sweep(ctx, p, kind, tol, m, rho, run, pending)
        except _SweepError:
            if B == 1:
                run.failed[:] = True
                break
            # isolate the offending points by finishing each one on its own
            for k in pending:
                one = [k]
                r = _Run.start(run.dl[one], record, transcript)
                r.iters[:] = run.iters[k]
                sub = ctx.take(one)
                mk = None if m is None else m[one]
                rk = None if rho is None else rho[one]
                q = np.arange(1)
                while q.size:
                    try:
                        q = _sweep(sub, p, kind, tol, mk, rk, r, q)
                    except _SweepError:
                        r.failed[:] = True
                        break
                run.dl[k] = r.dl[0]
                run.iters[k] = r.iters[0]
                run.clamped[k] += r.clamped[0]
                run.failed[k] = r.failed[0]
                run.singular[k] = r.singular[0]
                if record:
                    run.conds[k].extend(r.conds[0])
                if transcript:
                    run.trans[k].extend(r.trans[0])
            break
    return run


def _raise_failure(run: _Run, what: str):
    bad = np.flatnonzero(run.failed)
    cls = ConditioningError if np.any(run.singular[bad]) else NonConvergenceError
    raise cls(f"{what}: no convergence at point(s) {bad.tolist()} within {run.iters[bad].max()} iterations")


def minimize_energy(ctx: StepContext, x0, p: SolverParams, max_iter: int = 200,
                    strict: bool = True) -> np.ndarray:
    """Second-order projected Newton for min i_inc(dl) subject to dl >= 0.

    Single point, ``ctx`` with a batch axis of length one. The free block uses
    saddle-free Newton directions (eigenvalues replaced by their moduli) and
    a negative-curvature step at saddles, so symmetric stationary points are
    left. Returns a point satisfying the KKT conditions of the energy. With
    ``strict=False`` a stalled search returns its best iterate instead of
    raising; the energy is only resolved to ~1e-14, which can leave the last
    digits of the KKT residual out of reach on nearly flat directions.
    """
    mu = ctx.params.mu
    tol = 1e-3 * p.newton_tol
    upper = 0.5
    x = np.clip(np.asarray(x0, dtype=float), 0.0, upper)
    n = x.size

    def ev_at(y):
        e = evaluate(ctx, y[None], order=2)
        return float(e.energy[0]), e.grad[0], e.hess[0]

    f, g, H = ev_at(x)
    best, best_x, stale = np.inf, x, 0
    for _ in range(max_iter):
        kkt = float(np.max(np.abs(np.minimum(g, mu * x))))
        if kkt < 0.5 * best:
            best, best_x, stale = kkt, x, 0
        else:
            stale += 1
            if not strict and stale >= 2 * _STAGNATION:
                return best_x
        eps = min(1e-6, float(np.max(np.abs(x - np.clip(x - g, 0.0, upper)))))
        # bind only where a diagonal Newton step would reach the bound
        bind = (x <= eps) & (g > 0.0) & (x * np.diag(H) <= g)
        free = ~bind
        lam, V = np.linalg.eigh(H[np.ix_(free, free)]) if np.any(free) else (np.ones(1), np.zeros((0, 1)))
        if kkt <= tol and lam[0] > 0.0:
            return x
        d = np.zeros(n)
        # epsilon-binding slips go straight to the bound
        d[bind] = -x[bind]
        if np.any(free):
            # include the gradient change caused by the bound moves
            gF = g[free] + H[np.ix_(free, bind)] @ d[bind]
            c = V.T @ gF
            dF = -V @ (c / np.maximum(np.abs(lam), 1e-8 * mu))
            if lam[0] < 0.0:
                v = V[:, 0]
                sgn = -np.sign(c[0]) if c[0] != 0.0 else (1.0 if v.sum() >= 0.0 else -1.0)
                dF = dF + sgn * v * max(float(np.max(x)), 1e-4)
            d[free] = dF
        t = min(1.0, _MAX_SEARCH_STEP / max(float(np.max(np.abs(d))), 1e-300))
        # stop at the first bound a decreasing slip reaches rather than projecting past it
        hit = (d < 0.0) & (x > 0.0)
        if np.any(hit):
            t_bound = float(np.min(x[hit] / -d[hit]))
            if 1e-6 * t < t_bound < t:
                t = t_bound
        for _ in range(60):
            y = np.clip(x + t * d, 0.0, upper)
            try:
                fy, gy, Hy = ev_at(y)
            except (StepTooLargeError, ValueError, np.linalg.LinAlgError):
                t *= 0.5
                continue
            decrease = fy <= f + 1e-4 * float(g @ (y - x))
            local = lam[0] > 0.0 and float(np.max(np.abs(np.minimum(gy, mu * y)))) < 0.5 * kkt
            if decrease or local:
                break
            t *= 0.5
        else:
            if not strict:
                return best_x
            raise NonConvergenceError("energy minimization: line search failed")
        x, f, g, H = y, fy, gy, Hy
    if not strict:
        return best_x
    raise NonConvergenceError("energy minimization: iteration limit")


@dataclass
class _Outcome:
    dl: np.ndarray
    iters: np.ndarray
    outer: np.ndarray
    clamped: np.ndarray
    rescued: np.ndarray
    conds: list | None
    trans: list | None
    m: np.ndarray | None = None
    rho: np.ndarray | None = None


def _rescue(ctx, p, k, dl_prev):
    if not p.globalize or p.algorithm == "fb_return_mapping":
        return None
    x0 = np.zeros(ctx.n_sys) if dl_prev is None else dl_prev[k]
    one = ctx.take([k])
    x = minimize_energy(one, x0, p, strict=False)
    if p.algorithm == "auglag_variational":
        return x
    g = evaluate(one, x[None], order=1).grad[0]
    if np.max(np.abs(np.minimum(g, ctx.params.mu * x))) <= p.newton_tol:
        return x
    # stalled on a flat, degenerate valley: proximal (AL) iterations from the best point
    try:
        return _solve_batch(one, replace(p, algorithm="auglag_variational", globalize=False), x[None]).dl[0]
    except NonConvergenceError:
        return x


def _solve_batch(ctx, p, dl_prev=None, record=False, transcript=False) -> _Outcome:
    """Core dispatcher; ``ctx`` has one leading batch axis."""
    B = ctx.F.shape[0]
    n = ctx.n_sys
    kind = p.algorithm
    zeros = np.zeros((B, n))
    rescued = np.zeros(B, dtype=bool)
    if dl_prev is not None:
        dl_prev = np.array(np.broadcast_to(dl_prev, (B, n)), dtype=float)
    if kind != "auglag_variational":
        run = _newton(ctx, p, kind, zeros, p.newton_tol, record=record, transcript=transcript)
        for k in np.flatnonzero(run.failed):
            x = _rescue(ctx, p, k, dl_prev)
            if x is None:
                break
            r = _newton(ctx.take([k]), p, kind, x[None], p.newton_tol, record=record, transcript=transcript)
            r.iters += run.iters[k]
            run.failed[k] = run.singular[k] = False
            run.absorb(k, r)
            rescued[k] = True
        if np.any(run.failed):
            _raise_failure(run, kind)
        return _Outcome(run.dl, run.iters, np.zeros(B, dtype=int), run.clamped, rescued, run.conds, run.trans)

    mu = ctx.params.mu
    m = zeros.copy() if dl_prev is None else dl_prev.copy()
    rho = np.full(B, p.penalty_hat / mu)
    rho_cap = p.penalty_cap / mu
    out = _Outcome(zeros.copy(), np.zeros(B, dtype=int), np.zeros(B, dtype=int), np.zeros(B, dtype=int),
                   rescued, [[] for _ in range(B)] if record else None, None, m.copy(), rho.copy())
    pending = np.arange(B)
    first = True
    for _ in range(p.max_outer_al):
        sub = _take(ctx, pending, B)
        start = zeros[pending] if first else m[pending]
        run = _newton(sub, p, kind, start, p.newton_tol / mu, m=m[pending], rho=rho[pending], record=record)
        first = False
        for j in np.flatnonzero(run.failed):
            k = pending[j]
            x = _rescue(ctx, p, k, dl_prev)
            if x is None:
                _raise_failure(run, kind)
            # a KKT point is the fixed point of the multiplier update
            g = evaluate(ctx.take([k]), x[None], order=1).grad[0]
            run.dl[j] = x
            if np.max(np.abs(np.minimum(g, mu * x))) <= p.newton_tol:
                m[k] = x
            rescued[k] = True
        d = run.dl
        change = np.max(np.abs(d - m[pending]), axis=-1)
        out.dl[pending] = d
        out.iters[pending] += run.iters
        out.outer[pending] += 1
        out.clamped[pending] += run.clamped
        if record:
            for j, k in enumerate(pending):
                out.conds[k].extend(run.conds[j])
        out.m[pending] = m[pending]
        out.rho[pending] = rho[pending]
        # on active systems the drive equals change / rho, so stop only once that is below newton_tol too
        fin = (change <= p.outer_tol) & (change <= rho[pending] * p.newton_tol)
        m[pending] = d
        rho[pending] = np.minimum(rho[pending] * p.penalty_growth, rho_cap)
        pending = pending[~fin]
        if not pending.size:
            return out
    raise NonConvergenceError(f"augmented Lagrangian: no stagnation within {p.max_outer_al} outer iterations")


def solve_batch(ctx: StepContext, params: SolverParams, dlambda_prev=None, mixed=False) -> BatchResult:
    """Solve every material point of a batched context (one leading axis).

    Raises :class:`NonConvergenceError` if any point fails, so that the
    caller can cut the load step.
    """
    p = params.resolve(ctx.params.mu)
    o = _solve_batch(ctx, p, dlambda_prev)
    rm = p.algorithm == "fb_return_mapping"
    ev = evaluate(ctx, o.dl, order=2, return_mapping=rm, mixed=mixed)
    _, J, dG_da, _ = _system(p.algorithm, o.dl, ev, p, o.m, o.rho)
    return BatchResult(o.dl, ev, J, dG_da, o.iters, o.outer)


def _batch1(ctx: StepContext) -> StepContext:
    s = ctx.prev
    prev = CrystalState(s.F[None], s.Fp[None], s.alpha[None], s.s[None], s.grad_s[None],
                        np.atleast_1d(s.psi))
    return replace(ctx, F=np.asarray(ctx.F)[None], prev=prev,
                   s=np.asarray(ctx.s)[None], grad_s=np.asarray(ctx.grad_s)[None])


def kkt_residual(dlambda, a, w) -> float:
    """max_i |min(a_i, w dlambda_i)| in GPa; zero exactly at a KKT point."""
    return float(np.max(np.abs(np.minimum(a, w * np.asarray(dlambda)))))


def solve(ctx: StepContext, params: SolverParams, dlambda_prev=None, transcript=False, conditions="all"):
    """Single material point: returns (dlambda, SolveDiagnostics, Evaluation).

    ``conditions`` selects which Newton iterations get an SVD condition
    number: ``"all"`` or ``"ends"`` (first and converged iterate only).
    """
    if conditions not in ("all", "ends"):
        raise ValueError(f"conditions must be 'all' or 'ends', got {conditions!r}")
    p = params.resolve(ctx.params.mu)
    diag = SolveDiagnostics()
    try:
        o = _solve_batch(_batch1(ctx), p, None if dlambda_prev is None else np.asarray(dlambda_prev)[None],
                         record=conditions if conditions == "ends" else True, transcript=transcript)
    except NonConvergenceError as exc:
        exc.diagnostics = diag
        raise
    dl = o.dl[0]
    rm = p.algorithm == "fb_return_mapping"
    ev = evaluate(ctx, dl, order=1)
    a = -ev.phi_nonl if rm else ev.grad
    diag.newton_iterations = int(o.iters[0])
    diag.outer_iterations = int(o.outer[0])
    diag.condition_numbers = o.conds[0]
    diag.clamped = int(o.clamped[0])
    diag.rescued = bool(o.rescued[0])
    diag.transcript = o.trans[0] if o.trans is not None else None
    diag.active_set = tuple(np.flatnonzero(dl > ACTIVE_THRESHOLD).tolist())
    diag.kkt_residual = kkt_residual(dl, a, p.w)
    diag.converged = True
    return dl, diag, ev


def solve_fb(ctx: StepContext, params: SolverParams | None = None):
    return solve(ctx, replace(params or SolverParams(), algorithm="fb_variational"))


def solve_min_ncp(ctx: StepContext, params: SolverParams | None = None, transcript=False):
    return solve(ctx, replace(params or SolverParams(), algorithm="min_ncp_variational"),
                 transcript=transcript)


def solve_auglag(ctx: StepContext, params: SolverParams | None = None, dlambda_prev=None):
    return solve(ctx, replace(params or SolverParams(), algorithm="auglag_variational"), dlambda_prev)


def solve_return_mapping_fb(ctx: StepContext, params: SolverParams | None = None):
    return solve(ctx, replace(params or SolverParams(), algorithm="fb_return_mapping"))


def residual_fb(ctx: StepContext, dlambda, params: SolverParams | None = None) -> np.ndarray:
    """Fischer-Burmeister residual; the return-mapping algorithm swaps in -phi."""
    p = (params or SolverParams()).resolve(ctx.params.mu)
    rm = p.algorithm == "fb_return_mapping"
    ev = evaluate(ctx, dlambda, order=1)
    return _fb_parts(np.asarray(dlambda, dtype=float), driving_force(ev, rm), p.w, p.delta)[0]


def jacobian_fb(ctx: StepContext, dlambda, params: SolverParams | None = None) -> np.ndarray:
    p = (params or SolverParams()).resolve(ctx.params.mu)
    kind = "fb_return_mapping" if p.algorithm == "fb_return_mapping" else "fb_variational"
    ev = evaluate(ctx, dlambda, order=2, return_mapping=kind == "fb_return_mapping")
    return _system(kind, np.asarray(dlambda, dtype=float), ev, p)[1]

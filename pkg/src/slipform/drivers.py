"""Experiment drivers: homogeneous material-point paths, the scaling sweep and
the finite-element tensile test. Drivers return plain row dictionaries;
:func:`write_csv` turns them into the on-disk tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import Loading, RunConfig
from .fem2d import (FEModel, SpecimenGeometry, TensileLoading, build_tensile_mesh, run_tensile_fem,
                    write_vtk)
from .potential import StepContext, commit, initial_state
from .slip_geometry import get_catalogue, rotation_from_euler
from .solvers import ACTIVE_THRESHOLD, NonConvergenceError, solve

log = logging.getLogger(__name__)

SHEAR_COLUMNS = ("step", "F12", "tau12", "dlambda_sum", "alpha_sum", "n_active", "newton_iterations",
                 "outer_iterations", "cond_first", "cond_last", "kkt_residual", "dlambda_min", "drive_min",
                 "complementarity_max", "det_Fp", "rescued", "clamped")
_FULL = tuple(f"{k}{i + 1}{j + 1}" for k in ("F", "tau") for i in range(3) for j in range(3))
SWEEP_COLUMNS = ("w_scale", "w", "F12", "converged", "newton_iterations", "iteration", "condition_number")
TENSILE_COLUMNS = ("step", "u_prescribed_um", "reaction_force_N_per_um", "newton_iters")


class SimulationError(RuntimeError):
    """A step failed; ``step`` is the 1-based index of the failing step."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path, columns, rows):
    lines = [",".join(columns)]
    lines += [",".join(format_value(r[c]) for c in columns) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Rows of a table written by :func:`write_csv`, as floats."""
    text = Path(path).read_text().splitlines()
    cols = text[0].split(",")
    return [dict(zip(cols, map(float, line.split(",")))) for line in text[1:]]


@dataclass
class PathResult:
    rows: list
    state: object


def run_path(cfg: RunConfig, loading: Loading | None = None, conditions: str = "ends",
             full: bool = False) -> PathResult:
    """Drive one material point through the configured deformation path.

    Each step starts the local Newton iteration from zero slip; the previous
    increments only seed the optional rescue and the multiplier estimate.
    """
    loading = loading or cfg.loading
    cat = get_catalogue(cfg.catalogue)
    R0 = rotation_from_euler(*cfg.orientation).R0
    params = cfg.material
    solver = cfg.solver.resolve(params.mu)
    state = initial_state(cat, params, Fp0=R0)
    dl_prev = np.zeros(cat.n_sys)
    rows = []
    for k in range(1, loading.n_steps + 1):
        F = loading.deformation(k)
        ctx = StepContext(F, state, params, cat, cfg.time_integration)
        try:
            dl, diag, ev = solve(ctx, solver, dl_prev, conditions=conditions)
        except NonConvergenceError as exc:
            raise SimulationError(f"step {k}: {exc}", k) from exc
        state = commit(ctx, dl, ev)
        dl_prev = dl
        rm = solver.algorithm == "fb_return_mapping"
        a = -ev.phi_nonl if rm else ev.grad
        tau = ev.P @ F.T
        conds = diag.condition_numbers
        row = {
            "step": k, "F12": F[0, 1], "tau12": tau[0, 1],
            "dlambda_sum": float(np.sum(dl)), "alpha_sum": float(np.sum(state.alpha)),
            "n_active": int(np.sum(dl > ACTIVE_THRESHOLD)),
            "newton_iterations": diag.newton_iterations, "outer_iterations": diag.outer_iterations,
            "cond_first": conds[0] if conds else math.nan, "cond_last": conds[-1] if conds else math.nan,
            "kkt_residual": diag.kkt_residual, "dlambda_min": float(np.min(dl)),
            "drive_min": float(np.min(a)), "complementarity_max": float(np.max(np.abs(dl * a))),
            "det_Fp": float(np.linalg.det(state.Fp)), "rescued": diag.rescued, "clamped": diag.clamped,
        }
        if full:
            row.update({f"F{i + 1}{j + 1}": F[i, j] for i in range(3) for j in range(3)})
            row.update({f"tau{i + 1}{j + 1}": tau[i, j] for i in range(3) for j in range(3)})
        rows.append(row)
    return PathResult(rows, state)


def run_simple_shear(cfg: RunConfig, conditions: str = "ends") -> list:
    """Simple shear F = I + F12 e1 (x) e2 over the configured range; one row per step."""
    if cfg.loading.component != "F12" or cfg.loading.path is not None:
        raise ValueError("simple shear drives the F12 component")
    return run_path(cfg, conditions=conditions).rows


def shear_columns(cfg: RunConfig):
    return SHEAR_COLUMNS + (_FULL if cfg.experiment == "custom_path" else ())


def run_custom_path(cfg: RunConfig) -> list:
    return run_path(cfg, full=True).rows


def sweep_config(cfg: RunConfig) -> RunConfig:
    """Fill the scaling-sweep defaults for keys the file leaves unset:
    orientation (pi/6, pi/4, 0), backward Euler, increments of 2e-2, the
    undamped iteration without rescue."""
    orientation = tuple(
        v if cfg.given(f"orientation.{k}") else d
        for k, v, d in zip("abc", cfg.orientation, (math.pi / 6, math.pi / 4, 0.0))
    )
    integ = cfg.time_integration if cfg.given("time_integration") else "backward_euler"
    inc = cfg.loading.increment if cfg.given("loading.increment") else 2e-2
    stop = max(cfg.sweep.snapshots)
    return replace(cfg, orientation=orientation, time_integration=integ,
                   loading=Loading("F12", 0.0, stop, inc),
                   solver=replace(cfg.solver, globalize=False))


def run_w_sweep(cfg: RunConfig, w_scales=None) -> list:
    """Per-iteration condition numbers at the snapshot steps, for each scaling w.

    Non-convergence is recorded (``converged`` = 0), not raised; snapshots
    after a failed step are reported as not converged.
    """
    cfg = sweep_config(cfg)
    mu = cfg.material.mu
    w_scales = cfg.sweep.w_scales if w_scales is None else tuple(w_scales)
    ld = cfg.loading
    snaps = {int(round((s - ld.start) / ld.increment)): s for s in cfg.sweep.snapshots}
    cat = get_catalogue(cfg.catalogue)
    R0 = rotation_from_euler(*cfg.orientation).R0
    rows = []
    for ws in w_scales:
        solver = replace(cfg.solver, w=ws * mu).resolve(mu)
        state = initial_state(cat, cfg.material, Fp0=R0)
        dl = np.zeros(cat.n_sys)
        failed = False
        for k in range(1, max(snaps) + 1):
            diag = None
            if not failed:
                ctx = StepContext(ld.deformation(k), state, cfg.material, cat, cfg.time_integration)
                try:
                    dl, diag, ev = solve(ctx, solver, dl, conditions="all")
                    state = commit(ctx, dl, ev)
                except NonConvergenceError as exc:
                    log.info("w = %g mu, step %d: no convergence (%s)", ws, k, exc)
                    failed = True
            if k not in snaps:
                continue
            base = {"w_scale": ws, "w": ws * mu, "F12": snaps[k]}
            if failed:
                rows.append({**base, "converged": False, "newton_iterations": -1, "iteration": -1,
                             "condition_number": math.nan})
                continue
            for i, c in enumerate(diag.condition_numbers):
                rows.append({**base, "converged": True, "newton_iterations": diag.newton_iterations,
                             "iteration": i, "condition_number": c})
    return rows


@dataclass
class TensileRun:
    rows: list
    model: FEModel
    field: object
    history: object
    snapshots: dict


def tensile_model(cfg: RunConfig) -> FEModel:
    t = cfg.tensile
    geom = SpecimenGeometry(t.length, t.width, t.center_width, t.gauge_length, t.nx, t.ny)
    mesh = build_tensile_mesh(geom, t.refinement)
    return FEModel(mesh, cfg.material, get_catalogue(cfg.catalogue), cfg.solver, cfg.time_integration,
                   Fp0=rotation_from_euler(*cfg.orientation).R0, quadrature=t.quadrature)


def run_tensile(cfg: RunConfig, output_dir=None, keep_every: int = 0) -> TensileRun:
    """Finite-element tensile test; writes per-step VTK files when requested.

    ``keep_every`` > 0 keeps copies of the Gauss-point history every that many
    steps in ``snapshots`` (for post-processing without VTK).
    """
    model = tensile_model(cfg)
    t = cfg.tensile
    loading = TensileLoading(t.elongation, t.n_steps, t.max_newton, t.max_halvings)
    vtk = output_dir is not None and "vtk" in cfg.output.formats
    snapshots = {}

    def on_step(k, fld, history):
        if vtk and k % max(t.vtk_every, 1) == 0:
            write_vtk(Path(output_dir) / f"tensile_{k:04d}.vtk", model, fld, history, f"step {k}")
        if keep_every and k % keep_every == 0:
            snapshots[k] = (fld.copy(), history)

    try:
        records, fld, history = run_tensile_fem(model, loading, on_step)
    except Exception as exc:
        raise SimulationError(f"tensile test failed: {exc}", -1) from exc
    rows = [{"step": r.step, "u_prescribed_um": r.displacement, "reaction_force_N_per_um": r.force,
             "newton_iters": r.newton_iterations} for r in records]
    return TensileRun(rows, model, fld, history, snapshots)

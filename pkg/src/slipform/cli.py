"""Command line: ``slipform run <config>``, ``slipform sweep-w <config>``,
``slipform verify``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, write_manifest
from .drivers import (SWEEP_COLUMNS, TENSILE_COLUMNS, SimulationError, run_custom_path, run_simple_shear,
                      run_tensile, run_w_sweep, shear_columns, sweep_config, write_csv)

log = logging.getLogger("slipform")


def _outdir(cfg, override):
    d = Path(override or cfg.output.directory)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    write_manifest(cfg, out)
    log.info("c2 conversion: 1 MPa*m = %g GPa*um^2", cfg.c2_factor)
    if cfg.experiment == "tensile":
        res = run_tensile(cfg, out)
        write_csv(out / "force_displacement.csv", TENSILE_COLUMNS, res.rows)
        target = out / "force_displacement.csv"
    else:
        rows = run_simple_shear(cfg) if cfg.experiment == "simple_shear" else run_custom_path(cfg)
        target = out / f"{cfg.experiment}.csv"
        write_csv(target, shear_columns(cfg), rows)
    print(f"wrote {target}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    write_manifest(sweep_config(cfg), out)
    rows = run_w_sweep(cfg)
    write_csv(out / "w_sweep.csv", SWEEP_COLUMNS, rows)
    print(f"wrote {out / 'w_sweep.csv'}")
    return 0


def verification_checks():
    """Deterministic property checks; yields (name, passed, detail)."""
    from .fem2d import FEModel, GlobalField, SpecimenGeometry, build_tensile_mesh, shape_serendipity8
    from .material import MaterialParams
    from .potential import StepContext, evaluate, initial_state
    from .slip_geometry import (fcc_catalogue, geometry_matrix, get_catalogue, numerical_rank,
                                rotation_from_euler)
    from .solvers import SolverParams, solve

    rng = np.random.default_rng(20240607)
    params = MaterialParams(c1=0.1, c2=0.5)
    cat = fcc_catalogue()

    def random_ctx(integ, catalogue=cat, prm=params):
        n = catalogue.n_sys
        R0 = rotation_from_euler(*rng.uniform(0, np.pi, 3)).R0
        st = initial_state(catalogue, prm, Fp0=R0)
        F = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
        return StepContext(F, st, prm, catalogue, integ, s=1e-3 * rng.random(n),
                           grad_s=1e-2 * rng.standard_normal((n, 3)))

    for integ in ("expmap", "backward_euler"):
        worst_g = worst_h = 0.0
        for _ in range(10):
            ctx = random_ctx(integ)
            x = 1e-3 * rng.random(cat.n_sys)
            ev = evaluate(ctx, x, order=2)
            h = 1e-6
            for i in range(cat.n_sys):
                e = np.zeros(cat.n_sys)
                e[i] = h
                p = evaluate(ctx, x + e, order=1)
                m = evaluate(ctx, x - e, order=1)
                worst_g = max(worst_g, abs((p.energy - m.energy) / (2 * h) - ev.grad[i])
                              / max(1.0, abs(ev.grad[i])))
                worst_h = max(worst_h, np.max(np.abs((p.grad - m.grad) / (2 * h) - ev.hess[:, i]))
                              / max(1.0, np.max(np.abs(ev.hess[:, i]))))
        yield f"gradient vs finite differences ({integ})", worst_g < 1e-5, f"{worst_g:.2e}"
        yield f"Hessian vs finite differences ({integ})", worst_h < 1e-4, f"{worst_h:.2e}"

    worst = 0.0
    for name in ("single1", "orthogonal2"):
        c = get_catalogue(name)
        for integ in ("expmap", "backward_euler"):
            ctx = random_ctx(integ, c)
            ev = evaluate(ctx, 0.05 * rng.random(c.n_sys), order=1)
            worst = max(worst, float(np.max(np.abs(ev.grad + ev.phi_nonl))))
    yield "gradient equals minus yield function (single/orthogonal)", worst < 1e-12, f"{worst:.2e}"

    r = numerical_rank(geometry_matrix(cat))
    yield "FCC geometry matrix rank", r == 5, str(r)

    ctx = StepContext(np.eye(3) + 0.2 * np.triu(np.ones((3, 3)), 1), initial_state(cat, MaterialParams()),
                      MaterialParams(), cat)
    sp_ = SolverParams().resolve(ctx.params.mu)
    dl, diag, ev = solve(ctx, sp_)
    detfp = abs(np.linalg.det(ev.Fp) - 1.0)
    yield "det Fp preserved by the exponential map", detfp < 1e-12, f"{detfp:.2e}"
    tol = 10 * sp_.newton_tol
    comp = float(np.max(np.abs(dl * ev.grad)))
    ok = dl.min() >= -1e-12 and ev.grad.min() >= -tol and comp <= sp_.delta / sp_.w + tol
    yield "KKT conditions at a converged solve", ok, f"max |dl*a| = {comp:.2e}"

    N, _ = shape_serendipity8(rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20))
    pu = float(np.max(np.abs(N.sum(axis=1) - 1)))
    yield "serendipity partition of unity", pu < 1e-14, f"{pu:.2e}"

    mesh = build_tensile_mesh(SpecimenGeometry(4.0, 2.0, 2.0, 0.0, 2, 1))
    pc = get_catalogue("planar2")
    model = FEModel(mesh, MaterialParams(c1=0.1, c2=1.0), pc, SolverParams())
    hist = model.initial_history()
    fld = GlobalField.zeros(mesh.n_nodes, pc.n_sys)
    fld.u[:] = 0.02 * rng.standard_normal(fld.u.shape)
    fld.s[:] = 1e-3 * rng.random(fld.s.shape)
    asm = model.assemble(fld, hist, tangent=False)
    worst = 0.0
    h = 1e-6
    for j in range(model.ndof):
        xp, xm = fld.x.copy(), fld.x.copy()
        xp[j] += h
        xm[j] -= h
        ep = model.assemble(GlobalField(xp, pc.n_sys), hist, tangent=False).energy
        em = model.assemble(GlobalField(xm, pc.n_sys), hist, tangent=False).energy
        worst = max(worst, abs((ep - em) / (2 * h) - asm.residual[j]))
    rel = worst / np.max(np.abs(asm.residual))
    yield "FEM residual is the energy gradient", rel < 1e-5, f"{rel:.2e}"


def cmd_verify(args) -> int:
    failures = 0
    for name, ok, detail in verification_checks():
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]")
    print(f"{failures} failure(s)")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slipform", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"slipform {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment named in a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides output.directory)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep-w", help="condition numbers for a range of scaling factors")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)
    v = sub.add_parser("verify", help="deterministic property checks")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation failed at step {exc.step}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

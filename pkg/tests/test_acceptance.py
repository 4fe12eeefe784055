"""Acceptance criteria 1-12, one reported line each.

The shear and tensile runs are computed once per session. Setting
SLIPFORM_ACCEPTANCE_CACHE to a directory stores them as pickles and reuses
them on later sessions (development only; unset it for a clean check).
"""

import math
import os
import pickle
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from slipform.config import parse_config
from slipform.drivers import run_simple_shear, run_tensile, run_w_sweep
from slipform.fem2d import micromorphic_mismatch, plastic_zone_width
from slipform.material import MaterialParams
from slipform.potential import StepContext, commit, consistency_limit_check, evaluate, initial_state
from slipform.slip_geometry import fcc_catalogue, geometry_matrix, get_catalogue, numerical_rank, rotation_from_euler
from slipform.solvers import ALGORITHMS, SolverParams, jacobian_fb, solve, solve_fb, solve_return_mapping_fb

import test_fem2d
import test_potential
import test_solvers
from conftest import ACCEPTANCE_LINES, ORI_0, ORI_1, random_context

pytestmark = pytest.mark.slow

MU = 21.1
NEWTON_TOL = 1e-10 * MU
DELTA = 1e-10
INCREMENTS = (2e-2, 2e-3, 2e-4)
ORIENTATIONS = {"ori0": ORI_0, "ori1": ORI_1}
C2_VALUES = (0.0, 1e-6, 2.0)  # MPa*m

_CACHE = os.environ.get("SLIPFORM_ACCEPTANCE_CACHE")
_memo = {}


def report(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def cached(key, compute):
    if key in _memo:
        return _memo[key]
    path = Path(_CACHE) / f"{key}.pkl" if _CACHE else None
    if path is not None and path.exists():
        value = pickle.loads(path.read_bytes())
    else:
        value = compute()
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(pickle.dumps(value))
    _memo[key] = value
    return value


def shear_run(algorithm, orientation, increment):
    """(rows, seconds) of a full simple-shear run over F12 in [0, 4]."""
    a, b, c = ORIENTATIONS[orientation]
    text = (f'experiment = "simple_shear"\n[orientation]\na = {a!r}\nb = {b!r}\nc = {c!r}\n'
            f'[solver]\nalgorithm = "{algorithm}"\n[loading]\nincrement = {increment!r}\n')

    def compute():
        t0 = time.perf_counter()
        rows = run_simple_shear(parse_config(text))
        return rows, time.perf_counter() - t0

    return cached(f"shear_{algorithm}_{orientation}_{increment:g}", compute)


def tau_curve(rows, stride=1):
    return np.array([r["F12"] for r in rows])[stride - 1::stride], np.array([r["tau12"] for r in rows])[stride - 1::stride]


def rel_linf(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def tensile_run(c2):
    text = f'experiment = "tensile"\n[material]\nc2 = {c2!r}\n'

    def compute():
        t0 = time.perf_counter()
        res = run_tensile(parse_config(text))
        forces = np.array([r["reaction_force_N_per_um"] for r in res.rows])
        u = np.array([r["u_prescribed_um"] for r in res.rows])
        return {"u": u, "force": forces, "width": plastic_zone_width(res.model, res.history),
                "mismatch": micromorphic_mismatch(res.model, res.field, res.history),
                "seconds": time.perf_counter() - t0}

    return cached(f"tensile_c2_{c2:g}", compute)


def test_criterion_01_gradient_hessian_oracle():
    rng = np.random.default_rng(1)
    cat = fcc_catalogue()
    worst_g = worst_h = 0.0
    t0 = time.perf_counter()
    for integ in ("expmap", "backward_euler"):
        ctx, x = test_potential.batched_states(rng, cat, 100, integrator=integ)
        ev = evaluate(ctx, x, order=2)
        h = 1e-6
        fd_g = np.empty_like(x)
        fd_h = np.empty_like(ev.hess)
        for i in range(cat.n_sys):
            e = np.zeros(cat.n_sys)
            e[i] = h
            p = evaluate(ctx, x + e, order=1)
            m = evaluate(ctx, x - e, order=1)
            fd_g[:, i] = (p.energy - m.energy) / (2 * h)
            fd_h[:, :, i] = (p.grad - m.grad) / (2 * h)
        worst_g = max(worst_g, float(np.max(np.max(np.abs(fd_g - ev.grad), axis=1) / np.max(np.abs(ev.grad), axis=1))))
        worst_h = max(worst_h, float(np.max(np.max(np.abs(fd_h - ev.hess), axis=(1, 2))
                                            / np.max(np.abs(ev.hess), axis=(1, 2)))))
    dt = time.perf_counter() - t0
    report(1, worst_g < 1e-5 and worst_h < 1e-4 and dt < 30,
           f"200 states; gradient rel err {worst_g:.1e} (< 1e-5), Hessian {worst_h:.1e} (< 1e-4), {dt:.1f} s")


def test_criterion_02_non_interacting_identity():
    rng = np.random.default_rng(2)
    params = MaterialParams(Qinf=0.1, H=0.5, c1=0.1)
    worst_id = worst_root = 0.0
    for name in ("single1", "orthogonal2"):
        cat = get_catalogue(name)
        for integ in ("expmap", "backward_euler"):
            for _ in range(20):
                ctx = random_context(rng, cat, params, integ, strain=0.05)
                ev = evaluate(ctx, 0.3 * rng.random(cat.n_sys), order=1)
                worst_id = max(worst_id, float(np.max(np.abs(ev.grad + ev.phi_nonl))))
                a = solve_fb(ctx)[0]
                b = solve_return_mapping_fb(ctx)[0]
                worst_root = max(worst_root, float(np.max(np.abs(a - b))))
    report(2, worst_id <= 1e-12 and worst_root <= 1e-8,
           f"max |d i/d dl + phi| = {worst_id:.1e} (<= 1e-12); FB vs return-mapping roots {worst_root:.1e} (<= 1e-8)")


def test_criterion_03_geometry_rank():
    r = numerical_rank(geometry_matrix(fcc_catalogue()))
    report(3, r == 5, f"FCC-24 rank {r} (threshold 1e-10 sigma_max)")


def test_criterion_04_kkt_suite():
    bad = []
    n_steps = 0
    for alg in ALGORITHMS:
        for ori in ORIENTATIONS:
            for inc in INCREMENTS:
                rows, _ = shear_run(alg, ori, inc)
                for r in rows:
                    n_steps += 1
                    tol = 10 * NEWTON_TOL
                    ok = (r["dlambda_min"] >= -1e-12 and r["drive_min"] >= -tol
                          and r["complementarity_max"] <= DELTA / MU + tol)
                    if not ok:
                        bad.append((alg, ori, inc, r["step"]))
    report(4, not bad, f"{n_steps} converged steps (4 algorithms x 2 orientations x 3 increments), "
                       f"{len(bad)} violations{'' if not bad else ': ' + str(bad[:3])}")


def test_criterion_05_return_mapping_step_independence():
    coarse, _ = shear_run("fb_return_mapping", "ori0", 2e-2)
    fine, t_fine = shear_run("fb_return_mapping", "ori0", 2e-4)
    Fc, tc = tau_curve(coarse)
    Ff, tf = tau_curve(fine, 100)
    assert np.allclose(Fc, Ff)
    err = rel_linf(tc, tf)
    fb_c, _ = shear_run("fb_variational", "ori0", 2e-2)
    fb_f, _ = shear_run("fb_variational", "ori0", 2e-4)
    fb_err = rel_linf(tau_curve(fb_c)[1], tau_curve(fb_f, 100)[1])
    report(5, err <= 1e-2, f"return mapping, (0,0,0): 2e-2 vs 2e-4 rel Linf {err:.2e} (<= 1e-2), "
                           f"fine run {t_fine:.0f} s; variational FB for contrast {fb_err:.2e}")


def test_criterion_06_algorithms_agree():
    worst = {}
    for ori, tol in (("ori1", 1e-2), ("ori0", 2e-2)):
        curves = {alg: tau_curve(shear_run(alg, ori, 2e-4)[0])[1] for alg in ALGORITHMS}
        worst[ori] = max(rel_linf(curves[a], curves[b]) for a in ALGORITHMS for b in ALGORITHMS if a != b)
    report(6, worst["ori1"] <= 1e-2 and worst["ori0"] <= 2e-2,
           f"dF12 = 2e-4, worst pairwise rel Linf: (pi/6,pi/4,0) {worst['ori1']:.2e} (<= 1e-2), "
           f"(0,0,0) {worst['ori0']:.2e} (<= 2e-2)")


def test_criterion_07_w_sweep_and_delta():
    cfg = parse_config("[sweep]\nw_scales = [0.01, 0.05, 0.1, 1.0, 10.0, 100.0]\nsnapshots = [0.04, 0.08]\n")
    rows = run_w_sweep(cfg)
    at = {}
    for r in rows:
        if r["F12"] == 0.04:
            at.setdefault(r["w_scale"], []).append(r)
    tested = (0.1, 1.0, 10.0, 100.0)
    final = {w: at[w][-1]["condition_number"] for w in tested if at[w][0]["converged"]}
    iters = {w: at[w][-1]["newton_iterations"] for w in tested if at[w][0]["converged"]}
    all_converged = len(final) == len(tested)
    best_cond = all_converged and min(final, key=final.get) == 1.0
    best_iter = all_converged and iters[1.0] == min(iters.values())
    small_fail = all(not at[w][0]["converged"] for w in (0.01, 0.05))
    finite = all(np.isfinite(r["condition_number"]) for r in rows if r["converged"])

    # delta = 0: converged Jacobians of the no-hardening shear runs
    p = SolverParams(delta=0.0).resolve(MU)
    cat = fcc_catalogue()
    many, singular, most = 0, 0, 0
    for ori in (ORI_0, ORI_1):
        st = initial_state(cat, MaterialParams(), Fp0=rotation_from_euler(*ori).R0)
        for k in range(1, 51):
            F = np.eye(3)
            F[0, 1] = 0.02 * k
            ctx = StepContext(F, st, MaterialParams(), cat)
            dl, diag, ev = solve(ctx, p)
            st = commit(ctx, dl, ev)
            most = max(most, len(diag.active_set))
            if len(diag.active_set) > 5:
                many += 1
                J = jacobian_fb(ctx, dl, p)
                singular += numerical_rank(J) < J.shape[0]
    delta_ok = singular == many
    detail = (f"F12 = 4e-2: final cond {', '.join(f'{w:g}mu {final.get(w, math.nan):.3g}' for w in tested)}; "
              f"Newton its {', '.join(f'{w:g}mu {iters.get(w, -1)}' for w in tested)}; "
              f"w in (0.01, 0.05)mu fail: {small_fail}; all converged conds finite: {finite}; "
              f"delta = 0: {many} converged steps with > 5 active (max active {most}), {singular} singular")
    report(7, best_cond and best_iter and small_fail and finite and delta_ok, detail)


def test_criterion_08_min_ncp_transcripts():
    worst, done, tried = test_solvers.min_ncp_transcript_agreement(n_steps=50)
    report(8, done == 50 and worst <= 1e-14,
           f"{done} randomized converged steps ({tried} drawn), per-iterate difference {worst:.1e} (<= 1e-14)")


def test_criterion_09_det_fp_drift():
    worst = 0.0
    for alg in ALGORITHMS:
        for ori in ORIENTATIONS:
            rows, _ = shear_run(alg, ori, 2e-4)
            worst = max(worst, max(abs(r["det_Fp"] - 1.0) for r in rows))
    report(9, worst <= 1e-8, f"max |det Fp - 1| over the 20,000-step exp-map runs {worst:.1e} (<= 1e-8)")


def test_criterion_10_consistency_order():
    orders = {}
    for ori_name, ori in ORIENTATIONS.items():
        for integ in ("expmap", "backward_euler"):
            res, hs, n_active = test_potential._consistency_series(ori, integ)
            assert min(n_active) >= 2
            orders[(ori_name, integ)] = consistency_limit_check(res, hs)
    low = min(orders.values())
    report(10, low >= 0.9, "observed orders " + ", ".join(f"{o}/{i} {v:.2f}" for (o, i), v in orders.items())
           + " (>= 0.9)")


def test_criterion_11_fem_variational_structure():
    rng = np.random.default_rng(11)
    worst = 0.0
    for alg in ("fb_variational", "min_ncp_variational", "auglag_variational"):
        model = test_fem2d.FEModel(test_fem2d.patch_mesh(), test_fem2d.MICRO, get_catalogue("planar2"),
                                   SolverParams(algorithm=alg), Fp0=rotation_from_euler(0.3, 0, 0).R0)
        hist = model.initial_history()
        fld = test_fem2d.random_field(model, rng)
        asm = model.assemble(fld, hist, tangent=False)
        h = 1e-6
        fd = np.empty(model.ndof)
        for j in range(model.ndof):
            xp, xm = fld.x.copy(), fld.x.copy()
            xp[j] += h
            xm[j] -= h
            fd[j] = (model.assemble(test_fem2d.GlobalField(xp, model.n_sys), hist, tangent=False).energy
                     - model.assemble(test_fem2d.GlobalField(xm, model.n_sys), hist, tangent=False).energy) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - asm.residual)) / np.max(np.abs(asm.residual))))

    mesh = test_fem2d.patch_mesh()
    cat = fcc_catalogue()
    model = test_fem2d.FEModel(mesh, test_fem2d.MICRO, cat, Fp0=rotation_from_euler(0.2, 0.4, 0.1).R0)
    H = np.array([[2e-4, -1e-4], [0.5e-4, -1.5e-4]])
    exact = mesh.nodes @ H.T
    bnd = test_fem2d.boundary_nodes(mesh)
    bc = test_fem2d.Dirichlet(np.concatenate([model.dof(bnd, 0), model.dof(bnd, 1)]),
                              np.concatenate([exact[bnd, 0], exact[bnd, 1]]))
    step = test_fem2d.assemble_and_solve_step(model, test_fem2d.GlobalField.zeros(mesh.n_nodes, cat.n_sys),
                                              model.initial_history(), bc, tol=1e-14)
    patch = float(np.max(np.abs(step.field.u - exact)) / np.max(np.abs(exact)))
    report(11, worst < 1e-5 and patch <= 1e-8,
           f"4-element patch: residual vs energy FD rel err {worst:.1e} (< 1e-5); patch test error {patch:.1e} (<= 1e-8)")


def test_criterion_12_tensile():
    runs = {c2: tensile_run(c2) for c2 in C2_VALUES}
    f0, f1, f2 = (runs[c]["force"] for c in C2_VALUES)
    peak = max(int(np.argmax(runs[c]["force"])) for c in C2_VALUES)
    post = slice(peak + 1, None)
    ordered = bool(np.all(f2[post] > f1[post]) and np.all(f1[post] > f0[post]))
    d0 = np.diff(f0[int(np.argmax(f0)):])
    softening = bool(d0.size > 0 and np.all(d0 < 0))
    widths = [runs[c]["width"] for c in C2_VALUES]
    widening = all(b >= a for a, b in zip(widths, widths[1:]))
    mism = [runs[c]["mismatch"] for c in C2_VALUES]
    small_mismatch = all(m <= 0.10 for m in mism)
    minutes = sum(runs[c]["seconds"] for c in C2_VALUES) / 60
    gap10 = float(np.min(f1[post] - f0[post])) if f0[post].size else math.nan
    detail = (f"post-peak (steps > {peak + 1}) ordering 2 > 1e-6 > 0 MPa*m: {ordered} "
              f"(min gap 1e-6 vs 0: {gap10:.2e} N/um); c2 = 0 monotone softening: {softening}; "
              f"zone widths {', '.join(f'{w:.2f}' for w in widths)} um non-decreasing: {widening}; "
              f"alpha-s mismatch {', '.join(f'{m:.1%}' for m in mism)} (<= 10%): {small_mismatch}; "
              f"{minutes:.0f} min")
    report(12, ordered and softening and widening and small_mismatch, detail)

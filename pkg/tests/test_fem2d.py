import numpy as np
import pytest

from slipform.fem2d import (NODE_PARENT, Dirichlet, FEModel, GlobalField, Mesh, SpecimenGeometry,
                            assemble_and_solve_step, build_tensile_mesh, gauss_rule, micromorphic_mismatch,
                            plastic_zone_width, reaction_force, shape_serendipity8, tensile_constraints,
                            write_vtk)
from slipform.material import MaterialParams
from slipform.slip_geometry import fcc_catalogue, get_catalogue, rotation_from_euler
from slipform.solvers import ALGORITHMS, SolverParams

MICRO = MaterialParams(c1=0.1, c2=0.5)


def patch_mesh(distort=0.15):
    """2 x 2 patch on [0, 2] x [-1, 1] with the centre node moved off the grid."""
    mesh = build_tensile_mesh(SpecimenGeometry(2.0, 2.0, 2.0, 0.0, 2, 2))
    nodes = mesh.nodes.copy()
    centre = int(np.argmin(np.linalg.norm(nodes - [1.0, 0.0], axis=1)))
    nodes[centre] += [distort, -0.7 * distort]
    els = mesh.elements
    for e in els:  # keep mid-side nodes on straight edges
        for k, (a, b) in zip(range(4, 8), ((0, 1), (1, 2), (2, 3), (3, 0))):
            nodes[e[k]] = 0.5 * (nodes[e[a]] + nodes[e[b]])
    return Mesh(nodes, els, mesh.sets)


def boundary_nodes(mesh):
    X = mesh.nodes
    on = (np.isclose(X[:, 0], X[:, 0].min()) | np.isclose(X[:, 0], X[:, 0].max())
          | np.isclose(X[:, 1], X[:, 1].min()) | np.isclose(X[:, 1], X[:, 1].max()))
    return np.flatnonzero(on)


def random_field(model, rng, u_scale=0.02, s_scale=1e-3):
    fld = GlobalField.zeros(model.mesh.n_nodes, model.n_sys)
    fld.u[:] = u_scale * rng.standard_normal(fld.u.shape)
    fld.s[:] = s_scale * rng.random(fld.s.shape)
    return fld


# shape functions and quadrature

def test_partition_of_unity_and_gradient_sum(rng):
    xi, eta = rng.uniform(-1, 1, (2, 50))
    N, dN = shape_serendipity8(xi, eta)
    assert np.allclose(N.sum(axis=-1), 1.0, atol=1e-14)
    assert np.allclose(dN.sum(axis=-2), 0.0, atol=1e-14)


def test_kronecker_property():
    N, _ = shape_serendipity8(NODE_PARENT[:, 0], NODE_PARENT[:, 1])
    assert np.allclose(N, np.eye(8), atol=1e-15)


def test_shape_gradients_against_finite_differences(rng):
    xi, eta = rng.uniform(-0.9, 0.9, (2, 10))
    _, dN = shape_serendipity8(xi, eta)
    h = 1e-6
    fx = (shape_serendipity8(xi + h, eta)[0] - shape_serendipity8(xi - h, eta)[0]) / (2 * h)
    fy = (shape_serendipity8(xi, eta + h)[0] - shape_serendipity8(xi, eta - h)[0]) / (2 * h)
    assert np.allclose(dN[..., 0], fx, atol=1e-9)
    assert np.allclose(dN[..., 1], fy, atol=1e-9)


def test_shape_function_integrals():
    # closed-form integrals over the parent square: corners -1/3, mid-sides 4/3
    pts, w = gauss_rule(3)
    N, _ = shape_serendipity8(pts[:, 0], pts[:, 1])
    integ = w @ N
    assert np.allclose(integ[:4], -1.0 / 3.0, atol=1e-14)
    assert np.allclose(integ[4:], 4.0 / 3.0, atol=1e-14)


def test_shape_functions_reproduce_quadratic_fields(rng):
    # serendipity space contains 1, x, y, x^2, xy, y^2, x^2 y, x y^2
    f = lambda x, y: 1 + 2 * x - y + 0.5 * x**2 - 3 * x * y + y**2 + 0.7 * x**2 * y - 0.2 * x * y**2
    nodal = f(NODE_PARENT[:, 0], NODE_PARENT[:, 1])
    xi, eta = rng.uniform(-1, 1, (2, 20))
    N, _ = shape_serendipity8(xi, eta)
    assert np.allclose(N @ nodal, f(xi, eta), atol=1e-13)


def test_shape_functions_outside_parent_square():
    with pytest.raises(ValueError):
        shape_serendipity8(np.array([1.5]), np.array([0.0]))


@pytest.mark.parametrize("order, exact_degree", [(2, 3), (3, 5)])
def test_gauss_rule_exactness(order, exact_degree):
    pts, w = gauss_rule(order)
    assert len(w) == order**2 and w.sum() == pytest.approx(4.0)
    p = exact_degree
    assert w @ (pts[:, 0] ** (p - 1) * pts[:, 1] ** (p - 1)) == pytest.approx((2 / p) ** 2, rel=1e-13)
    with pytest.raises(ValueError):
        gauss_rule(4)


# mesh

def test_tensile_mesh_defaults():
    mesh = build_tensile_mesh()
    geom = SpecimenGeometry()
    assert mesh.n_elements == 160
    assert mesh.n_nodes == 569
    assert mesh.midside_error() < 1e-14
    # the straight-edged mesh cuts the cosine dip by chords
    assert mesh.area() == pytest.approx(geom.outline_area(), rel=1e-4)
    assert build_tensile_mesh(refinement=2).area() == pytest.approx(geom.outline_area(), rel=1e-5)
    assert np.allclose(mesh.nodes[mesh.sets["left_grip"], 0], 0.0)
    assert np.allclose(mesh.nodes[mesh.sets["right_grip"], 0], geom.length)
    assert len(mesh.sets["left_grip"]) == 2 * geom.ny + 1


def test_specimen_outline():
    g = SpecimenGeometry()
    assert g.width_at(g.length / 2) == pytest.approx(g.center_width)
    assert g.width_at(0.0) == g.width
    assert g.outline_area() == pytest.approx(784.0)
    rect = build_tensile_mesh(SpecimenGeometry(gauge_length=0.0))
    assert rect.area() == pytest.approx(840.0, rel=1e-13)


@pytest.mark.parametrize("kw", [dict(width=-1.0), dict(center_width=12.0), dict(gauge_length=100.0), dict(nx=0)])
def test_invalid_geometry(kw):
    with pytest.raises(ValueError):
        SpecimenGeometry(**kw)


def test_invalid_connectivity():
    with pytest.raises(ValueError):
        Mesh(np.zeros((4, 2)), np.array([[0, 1, 2, 3]]))
    with pytest.raises(ValueError):
        Mesh(np.zeros((4, 2)), np.arange(8)[None])


# assembly

def test_zero_state_gives_zero_residual(fcc):
    model = FEModel(patch_mesh(), MICRO, fcc)
    fld = GlobalField.zeros(model.mesh.n_nodes, model.n_sys)
    asm = model.assemble(fld, model.initial_history())
    assert np.max(np.abs(asm.residual)) < 1e-14
    assert asm.energy == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("algorithm", ["fb_variational", "min_ncp_variational", "auglag_variational"])
def test_residual_is_energy_gradient(rng, algorithm):
    """Four-element patch, planar catalogue, plastic state."""
    cat = get_catalogue("planar2")
    model = FEModel(patch_mesh(), MICRO, cat, SolverParams(algorithm=algorithm),
                    Fp0=rotation_from_euler(0.3, 0.0, 0.0).R0)
    hist = model.initial_history()
    fld = random_field(model, rng)
    asm = model.assemble(fld, hist, tangent=False)
    assert np.any(asm.dlambda > 1e-6)
    h = 1e-6
    fd = np.empty(model.ndof)
    for j in range(model.ndof):
        xp, xm = fld.x.copy(), fld.x.copy()
        xp[j] += h
        xm[j] -= h
        fd[j] = (model.assemble(GlobalField(xp, cat.n_sys), hist, tangent=False).energy
                 - model.assemble(GlobalField(xm, cat.n_sys), hist, tangent=False).energy) / (2 * h)
    assert np.max(np.abs(fd - asm.residual)) / np.max(np.abs(asm.residual)) < 1e-5


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_consistent_tangent(rng, algorithm):
    cat = get_catalogue("planar2")
    mesh = build_tensile_mesh(SpecimenGeometry(2.0, 2.0, 2.0, 0.0, 1, 1))
    model = FEModel(mesh, MICRO, cat, SolverParams(algorithm=algorithm))
    hist = model.initial_history()
    fld = random_field(model, rng)
    asm = model.assemble(fld, hist)
    assert np.any(asm.dlambda > 1e-6)
    K = asm.tangent.toarray()
    Kfd = model.fd_tangent(fld, hist, h=1e-7)
    assert np.max(np.abs(K - Kfd)) / np.max(np.abs(K)) < 1e-5
    if algorithm != "fb_return_mapping":
        assert np.allclose(K, K.T, atol=1e-10 * np.max(np.abs(K)))


def test_element_residual_matches_assembly(rng, fcc):
    model = FEModel(patch_mesh(), MICRO, fcc)
    hist = model.initial_history()
    fld = random_field(model, rng, u_scale=0.005)
    R = model.assemble(fld, hist, tangent=False).residual
    total = np.zeros(model.ndof)
    for e in range(model.mesh.n_elements):
        r, _ = model.element_residual(e, fld, hist)
        total[model.edofs[e]] += r
    assert np.allclose(total, R, atol=1e-13)


def test_patch_test():
    """Homogeneous deformation imposed on the boundary is reproduced inside."""
    mesh = patch_mesh()
    cat = fcc_catalogue()
    model = FEModel(mesh, MICRO, cat, Fp0=rotation_from_euler(0.2, 0.4, 0.1).R0)
    H = np.array([[2e-4, -1e-4], [0.5e-4, -1.5e-4]])
    exact = mesh.nodes @ H.T
    bnd = boundary_nodes(mesh)
    bc = Dirichlet(np.concatenate([model.dof(bnd, 0), model.dof(bnd, 1)]),
                   np.concatenate([exact[bnd, 0], exact[bnd, 1]]))
    fld = GlobalField.zeros(mesh.n_nodes, cat.n_sys)
    step = assemble_and_solve_step(model, fld, model.initial_history(), bc, tol=1e-14)
    err = np.max(np.abs(step.field.u - exact)) / np.max(np.abs(exact))
    assert err <= 1e-8
    assert np.max(np.abs(step.field.s)) < 1e-12
    assert np.max(step.history.dlambda) == 0.0


def test_elastic_newton_converges_quadratically():
    mesh = build_tensile_mesh(SpecimenGeometry(8.0, 2.0, 1.6, 4.0, 4, 1))
    cat = get_catalogue("planar2")
    model = FEModel(mesh, MaterialParams(Q0=10.0, Qinf=10.0, c1=0.1), cat)
    bc = tensile_constraints(model, 0.02)
    fld = GlobalField.zeros(mesh.n_nodes, cat.n_sys)
    step = assemble_and_solve_step(model, fld, model.initial_history(), bc)
    assert step.newton_iterations <= 3 and step.cuts == 0
    # small load: reaction scales linearly with the elongation
    step2 = assemble_and_solve_step(model, fld, model.initial_history(), tensile_constraints(model, 0.002))
    f1 = reaction_force(model, step.residual, mesh.sets["right_grip"])
    f2 = reaction_force(model, step2.residual, mesh.sets["right_grip"])
    assert f1 > 0 and f1 / f2 == pytest.approx(10.0, rel=2e-2)


def test_plastic_zone_and_mismatch_helpers(fcc):
    model = FEModel(patch_mesh(), MICRO, fcc)
    hist = model.initial_history()
    fld = GlobalField.zeros(model.mesh.n_nodes, model.n_sys)
    assert plastic_zone_width(model, hist) == 0.0
    assert micromorphic_mismatch(model, fld, hist) == 0.0
    hist.crystal.alpha[:9, 0] = 1e-2  # first element only
    assert plastic_zone_width(model, hist) == pytest.approx(np.ptp(model.X_qp[:9, 0]))
    assert micromorphic_mismatch(model, fld, hist) == pytest.approx(1.0)


def test_vtk_output(tmp_path, rng):
    cat = get_catalogue("planar2")
    model = FEModel(patch_mesh(), MICRO, cat)
    hist = model.initial_history()
    fld = random_field(model, rng, u_scale=1e-3)
    path = tmp_path / "out.vtk"
    write_vtk(path, model, fld, hist, "test")
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[2] == "ASCII"
    assert f"POINTS {model.mesh.n_nodes} double" in lines
    assert f"CELLS 4 36" in lines
    assert lines.count("23") == 4
    i = lines.index("VECTORS u double")
    assert np.allclose([float(v) for v in lines[i + 1].split()[:2]], fld.u[0], rtol=0, atol=0)

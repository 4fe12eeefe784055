"""Plane-strain finite elements with a displacement field and one micromorphic
field per slip system, discretized with 8-node serendipity quadrilaterals.

Each node carries ``[u_x, u_y, s_1 .. s_n]``. At every Gauss point the local
slip problem is solved for the current nodal values; the element residual is
the derivative of the assembled incremental energy with respect to the nodal
values (exactly so for the variational solvers, up to the smoothing of the
complementarity function).

Units: lengths in micrometres, stresses in GPa, reaction forces per unit
thickness in N/um.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .material import MaterialParams, reference_slip_directions
from .potential import CrystalState, StepContext, evaluate, initial_state
from .slip_geometry import SlipCatalogue
from .solvers import NonConvergenceError, SolverParams, _system, solve_batch

log = logging.getLogger(__name__)

# GPa * um (force per unit thickness) -> N/um
FORCE_TO_N_PER_UM = 1e-3

# parent coordinates: corners counter-clockwise, then mid-sides 0-1, 1-2, 2-3, 3-0
NODE_PARENT = np.array(
    [[-1, -1], [1, -1], [1, 1], [-1, 1], [0, -1], [1, 0], [0, 1], [-1, 0]], dtype=float
)

# VTK_QUADRATIC_QUAD uses the same node order
_VTK_CELL_TYPE = 23


def gauss_rule(order: int = 3):
    """Tensor Gauss-Legendre rule on the parent square: (points (q, 2), weights (q,))."""
    if order not in (2, 3):
        raise ValueError(f"quadrature order must be 2 or 3, got {order}")
    x, w = np.polynomial.legendre.leggauss(order)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([xi.ravel(), eta.ravel()]), np.outer(w, w).ravel()


def shape_serendipity8(xi, eta):
    """Shape functions and parent-space gradients of the 8-node serendipity quad.

    Accepts scalars or arrays; returns ``N`` with shape (..., 8) and ``dN``
    with shape (..., 8, 2).
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(np.abs(xi) > 1 + 1e-12) or np.any(np.abs(eta) > 1 + 1e-12):
        raise ValueError("parent coordinates must lie in [-1, 1]")
    a, b = NODE_PARENT[:4, 0], NODE_PARENT[:4, 1]
    x, y = xi[..., None], eta[..., None]
    N = np.empty(xi.shape + (8,))
    dN = np.empty(xi.shape + (8, 2))
    # corners
    N[..., :4] = 0.25 * (1 + a * x) * (1 + b * y) * (a * x + b * y - 1)
    dN[..., :4, 0] = 0.25 * a * (1 + b * y) * (2 * a * x + b * y)
    dN[..., :4, 1] = 0.25 * b * (1 + a * x) * (a * x + 2 * b * y)
    # mid-sides on eta = +-1 (nodes 4, 6) and xi = +-1 (nodes 5, 7)
    for k in (4, 6):
        bk = NODE_PARENT[k, 1]
        N[..., k] = 0.5 * (1 - xi**2) * (1 + bk * eta)
        dN[..., k, 0] = -xi * (1 + bk * eta)
        dN[..., k, 1] = 0.5 * (1 - xi**2) * bk
    for k in (5, 7):
        ak = NODE_PARENT[k, 0]
        N[..., k] = 0.5 * (1 + ak * xi) * (1 - eta**2)
        dN[..., k, 0] = 0.5 * ak * (1 - eta**2)
        dN[..., k, 1] = -(1 + ak * xi) * eta
    return N, dN


@dataclass
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    sets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=int)
        if self.elements.ndim != 2 or self.elements.shape[1] != 8:
            raise ValueError("elements must be an (n_elem, 8) connectivity array")
        if self.elements.min() < 0 or self.elements.max() >= len(self.nodes):
            raise ValueError("connectivity index out of range")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def jacobians(self, points):
        """Jacobian matrices dX/dxi at parent ``points``: (n_elem, q, 2, 2)."""
        _, dN = shape_serendipity8(points[:, 0], points[:, 1])
        X = self.nodes[self.elements]  # (E, 8, 2)
        return np.einsum("eka,qkb->eqab", X, dN)

    def area(self, order: int = 3) -> float:
        pts, w = gauss_rule(order)
        return float(np.sum(np.linalg.det(self.jacobians(pts)) * w))

    def midside_error(self) -> float:
        """Largest distance of a mid-side node from the midpoint of its edge."""
        X = self.nodes[self.elements]
        mids = 0.5 * (X[:, [0, 1, 2, 3]] + X[:, [1, 2, 3, 0]])
        return float(np.max(np.linalg.norm(X[:, 4:] - mids, axis=-1)))


@dataclass(frozen=True)
class SpecimenGeometry:
    """Dog-bone outline: full ``width`` at the ends, narrowing to
    ``center_width`` along a cosine profile spanning the central ``gauge_length``."""

    length: float = 84.0
    width: float = 10.0
    center_width: float = 6.0
    gauge_length: float = 28.0
    nx: int = 40
    ny: int = 4

    def __post_init__(self):
        if min(self.length, self.width, self.center_width) <= 0 or self.gauge_length < 0:
            raise ValueError("specimen dimensions must be positive")
        if self.center_width > self.width:
            raise ValueError("center width exceeds outer width")
        if self.gauge_length > self.length:
            raise ValueError("gauge length exceeds specimen length")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("element counts must be positive")

    def width_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.gauge_length == 0:
            return np.full_like(x, self.width)
        t = (x - 0.5 * self.length) / (0.5 * self.gauge_length)
        dip = 0.5 * (1 + np.cos(np.pi * np.clip(t, -1, 1)))
        return self.width - (self.width - self.center_width) * dip

    def outline_area(self) -> float:
        return self.length * self.width - 0.5 * (self.width - self.center_width) * self.gauge_length


def build_tensile_mesh(geom: SpecimenGeometry | None = None, refinement: int = 1) -> Mesh:
    """Structured serendipity mesh of the specimen, symmetric about y = 0.

    Element edges are straight, so mid-side nodes sit at edge midpoints.
    Node sets ``left_grip`` and ``right_grip`` hold the end-face nodes.
    """
    geom = geom or SpecimenGeometry()
    if refinement < 1:
        raise ValueError("refinement must be a positive integer")
    nx, ny = geom.nx * refinement, geom.ny * refinement
    ids = -np.ones((2 * nx + 1, 2 * ny + 1), dtype=int)
    xs = np.linspace(0.0, geom.length, 2 * nx + 1)
    nodes = []

    def corner(i, j):
        return np.array([xs[i], (j / (2 * ny) - 0.5) * geom.width_at(xs[i])])

    for i in range(2 * nx + 1):
        for j in range(2 * ny + 1):
            if i % 2 and j % 2:
                continue
            if i % 2 == 0:
                p = corner(i, j) if j % 2 == 0 else 0.5 * (corner(i, j - 1) + corner(i, j + 1))
            else:
                p = 0.5 * (corner(i - 1, j) + corner(i + 1, j))
            ids[i, j] = len(nodes)
            nodes.append(p)
    elements = []
    for ex in range(nx):
        for ey in range(ny):
            i, j = 2 * ex, 2 * ey
            elements.append([ids[i, j], ids[i + 2, j], ids[i + 2, j + 2], ids[i, j + 2],
                             ids[i + 1, j], ids[i + 2, j + 1], ids[i + 1, j + 2], ids[i, j + 1]])
    mesh = Mesh(np.array(nodes), np.array(elements),
                {"left_grip": ids[0][ids[0] >= 0], "right_grip": ids[-1][ids[-1] >= 0]})
    if np.any(np.linalg.det(mesh.jacobians(gauss_rule(3)[0])) <= 0):
        raise ValueError("degenerate geometry: non-positive element Jacobian")
    return mesh


@dataclass
class QuadratureState:
    """History at all Gauss points (flattened element-major): converged crystal
    state, the last slip increments and the first Piola stress."""

    crystal: CrystalState
    dlambda: np.ndarray
    P: np.ndarray


@dataclass
class GlobalField:
    """Nodal unknowns ``[u_x, u_y, s_1 .. s_n]`` stored node-major in ``x``."""

    x: np.ndarray
    n_sys: int

    @classmethod
    def zeros(cls, n_nodes: int, n_sys: int) -> "GlobalField":
        return cls(np.zeros(n_nodes * (2 + n_sys)), n_sys)

    @property
    def u(self) -> np.ndarray:
        return self.x.reshape(-1, 2 + self.n_sys)[:, :2]

    @property
    def s(self) -> np.ndarray:
        return self.x.reshape(-1, 2 + self.n_sys)[:, 2:]

    def copy(self) -> "GlobalField":
        return GlobalField(self.x.copy(), self.n_sys)


@dataclass
class Assembly:
    residual: np.ndarray
    energy: float
    tangent: sp.csr_matrix | None
    states: CrystalState
    dlambda: np.ndarray
    P: np.ndarray


class FEModel:
    """Discrete tensile problem: mesh, material, slip solver and quadrature data."""

    def __init__(self, mesh: Mesh, params: MaterialParams, catalogue: SlipCatalogue,
                 solver: SolverParams | None = None, integrator: str = "expmap",
                 Fp0=None, quadrature: int = 3):
        self.mesh = mesh
        self.params = params
        self.catalogue = catalogue
        self.solver = (solver or SolverParams()).resolve(params.mu)
        self.integrator = integrator
        self.Fp0 = np.eye(3) if Fp0 is None else np.asarray(Fp0, dtype=float)
        self.directions = reference_slip_directions(catalogue, self.Fp0)
        self.m2 = self.directions[:, :2]
        n = catalogue.n_sys
        self.n_sys = n
        self.ndof_node = 2 + n
        self.ndof = mesh.n_nodes * self.ndof_node

        pts, w = gauss_rule(quadrature)
        self.N, dN = shape_serendipity8(pts[:, 0], pts[:, 1])  # (q, 8), (q, 8, 2)
        Jm = mesh.jacobians(pts)
        det = np.linalg.det(Jm)
        if np.any(det <= 0):
            raise ValueError("non-positive element Jacobian")
        self.dN = np.einsum("qkb,eqba->eqka", dN, np.linalg.inv(Jm))  # reference gradients
        self.wdet = det * w  # (E, q)
        self.n_qp = self.wdet.size
        self.X_qp = np.einsum("qk,eka->eqa", self.N, mesh.nodes[mesh.elements]).reshape(-1, 2)
        self.element_area = float(np.mean(np.sum(self.wdet, axis=1)))

        local = np.arange(self.ndof_node)
        self.edofs = (mesh.elements[:, :, None] * self.ndof_node + local).reshape(mesh.n_elements, -1)
        self._pattern()

    def _pattern(self):
        E, nd = self.edofs.shape
        rows = np.repeat(self.edofs, nd, axis=1).ravel()
        cols = np.tile(self.edofs, (1, nd)).ravel()
        key = rows.astype(np.int64) * self.ndof + cols
        uniq, self._scatter = np.unique(key, return_inverse=True)
        self._rows = (uniq // self.ndof).astype(np.int64)
        self._cols = (uniq % self.ndof).astype(np.int64)

    def initial_history(self) -> QuadratureState:
        crystal = initial_state(self.catalogue, self.params, self.Fp0, batch=(self.n_qp,),
                                directions=self.directions)
        return QuadratureState(crystal, np.zeros((self.n_qp, self.n_sys)), np.zeros((self.n_qp, 3, 3)))

    def dof(self, nodes, component: int) -> np.ndarray:
        return np.asarray(nodes, dtype=int) * self.ndof_node + component

    def interpolate(self, fld: GlobalField):
        """Deformation gradient (plane strain), s and grad s at all Gauss points."""
        u = fld.u[self.mesh.elements]  # (E, 8, 2)
        s = fld.s[self.mesh.elements]  # (E, 8, n)
        E, q = self.wdet.shape
        F = np.broadcast_to(np.eye(3), (E, q, 3, 3)).copy()
        F[..., :2, :2] += np.einsum("eka,eqkb->eqab", u, self.dN)
        s_qp = np.einsum("qk,eki->eqi", self.N, s)
        g = np.zeros((E, q, self.n_sys, 3))
        g[..., :2] = np.einsum("eki,eqka->eqia", s, self.dN)
        n = self.n_sys
        return F.reshape(-1, 3, 3), s_qp.reshape(-1, n), g.reshape(-1, n, 3)

    def context(self, fld: GlobalField, history: QuadratureState) -> StepContext:
        F, s, g = self.interpolate(fld)
        return StepContext(F, history.crystal, self.params, self.catalogue, self.integrator, s, g,
                           self.directions)

    def assemble(self, fld: GlobalField, history: QuadratureState, tangent: bool = True) -> Assembly:
        """Local solves at every Gauss point, then residual, energy and tangent."""
        ctx = self.context(fld, history)
        res = solve_batch(ctx, self.solver, history.dlambda, mixed=tangent)
        ev = res.evaluation
        E, q = self.wdet.shape
        n = self.n_sys
        c1, c2 = self.params.c1, self.params.c2
        wd = self.wdet
        P2 = ev.P[:, :2, :2].reshape(E, q, 2, 2)
        proj = np.einsum("bia,ia->bi", ctx.grad_s[..., :2], self.m2).reshape(E, q, n)
        pen = c1 * (ctx.s - ev.alpha).reshape(E, q, n)
        mdN = np.einsum("ia,eqka->eqki", self.m2, self.dN)  # m_i . grad N_k

        r = np.zeros((E, 8, self.ndof_node))
        r[..., :2] = np.einsum("eq,eqab,eqkb->eka", wd, P2, self.dN)
        r[..., 2:] = (np.einsum("eq,eqi,qk->eki", wd, pen, self.N)
                      + c2 * np.einsum("eq,eqi,eqki->eki", wd, proj, mdN))
        R = np.zeros(self.ndof)
        np.add.at(R, self.edofs, r.reshape(E, -1))
        energy = float(np.sum(wd.ravel() * ev.energy))

        K = None
        if tangent:
            K = self._tangent(res, ev, mdN)
        states = CrystalState(ctx.F, ev.Fp, ev.alpha, ctx.s, ctx.grad_s, ev.psi)
        return Assembly(R, energy, K, states, res.dlambda, ev.P)

    def _tangent(self, res, ev, mdN) -> sp.csr_matrix:
        E, q = self.wdet.shape
        n = self.n_sys
        c1, c2 = self.params.c1, self.params.c2
        rm = self.solver.algorithm == "fb_return_mapping"
        da_dF = (ev.drm_dF if rm else ev.dgrad_dF)[:, :, :2, :2].reshape(-1, n, 4)
        J, dG_da = res.jacobian, res.dG_da
        if self.solver.algorithm == "auglag_variational":
            # the inner system carries a finite penalty; the converged point is
            # a KKT point, whose exact sensitivity follows from the active set
            _, J, dG_da, _ = _system("min_ncp_variational", res.dlambda, ev, self.solver)
        # implicit derivative of the local root: J dl + diag(dG/da) da = 0
        Xm = np.linalg.solve(J, dG_da[:, :, None] * np.eye(n))
        dl_dF = -Xm @ da_dF  # (B, n, 4)
        dl_ds = c1 * Xm  # da_j/ds_k = -c1 delta_jk
        dgF = ev.dgrad_dF[:, :, :2, :2].reshape(-1, n, 4)
        C_FF = ev.dP_dF[:, :2, :2, :2, :2].reshape(-1, 4, 4) + np.swapaxes(dgF, 1, 2) @ dl_dF
        C_Fs = np.swapaxes(dgF, 1, 2) @ dl_ds  # (B, 4, n)
        D_sF = -c1 * dl_dF
        D_ss = c1 * (np.eye(n) - dl_ds)

        wd = self.wdet
        C_FF = C_FF.reshape(E, q, 2, 2, 2, 2)
        C_Fs = C_Fs.reshape(E, q, 2, 2, n)
        D_sF = D_sF.reshape(E, q, n, 2, 2)
        D_ss = D_ss.reshape(E, q, n, n)
        dN, N = self.dN, self.N
        nd = self.ndof_node
        Ke = np.zeros((E, 8, nd, 8, nd))
        Ke[:, :, :2, :, :2] = np.einsum("eq,eqprst,eqkr,eqlt->ekpls", wd, C_FF, dN, dN, optimize=True)
        Ke[:, :, :2, :, 2:] = np.einsum("eq,eqprj,eqkr,ql->ekplj", wd, C_Fs, dN, N, optimize=True)
        Ke[:, :, 2:, :, :2] = np.einsum("eq,eqist,qk,eqlt->ekils", wd, D_sF, N, dN, optimize=True)
        Kss = np.einsum("eq,eqij,qk,ql->ekilj", wd, D_ss, N, N, optimize=True)
        if c2:
            diag = c2 * np.einsum("eq,eqki,eqli->ekil", wd, mdN, mdN, optimize=True)
            Kss += np.einsum("ekil,ij->ekilj", diag, np.eye(n))
        Ke[:, :, 2:, :, 2:] = Kss
        data = np.bincount(self._scatter, weights=Ke.ravel(), minlength=len(self._rows))
        return sp.csr_matrix((data, (self._rows, self._cols)), shape=(self.ndof, self.ndof))

    def element_residual(self, e: int, fld: GlobalField, history: QuadratureState):
        """Residual block of element ``e`` and the Gauss-point states it implies."""
        sub = self.restrict(e)
        hist = sub.history_slice(history, e, self.wdet.shape[1])
        a = sub.assemble(GlobalField(fld.x, self.n_sys), hist, tangent=False)
        return a.residual[self.edofs[e]], QuadratureState(a.states, a.dlambda, a.P)

    def restrict(self, e: int) -> "FEModel":
        m = object.__new__(FEModel)
        m.__dict__.update(self.__dict__)
        m.wdet = self.wdet[[e]]
        m.dN = self.dN[[e]]
        m.n_qp = m.wdet.size
        m.mesh = Mesh(self.mesh.nodes, self.mesh.elements[[e]], self.mesh.sets)
        m.edofs = self.edofs[[e]]
        m._pattern()
        return m

    @staticmethod
    def history_slice(history: QuadratureState, e: int, q: int) -> QuadratureState:
        idx = np.arange(e * q, (e + 1) * q)
        c = history.crystal
        crystal = CrystalState(c.F[idx], c.Fp[idx], c.alpha[idx], c.s[idx], c.grad_s[idx], c.psi[idx])
        return QuadratureState(crystal, history.dlambda[idx], history.P[idx])

    def fd_tangent(self, fld: GlobalField, history: QuadratureState, h: float = 1e-7) -> np.ndarray:
        """Dense central-difference tangent of the assembled residual (small meshes only)."""
        K = np.zeros((self.ndof, self.ndof))
        for j in range(self.ndof):
            xp, xm = fld.x.copy(), fld.x.copy()
            xp[j] += h
            xm[j] -= h
            rp = self.assemble(GlobalField(xp, self.n_sys), history, tangent=False).residual
            rn = self.assemble(GlobalField(xm, self.n_sys), history, tangent=False).residual
            K[:, j] = (rp - rn) / (2 * h)
        return K

    def nodal_average(self, values_qp) -> np.ndarray:
        """Element means of Gauss-point values, averaged onto the nodes."""
        E, q = self.wdet.shape
        v = np.asarray(values_qp).reshape((E, q) + np.shape(values_qp)[1:])
        emean = np.einsum("eq,eq...->e...", self.wdet, v) / np.sum(self.wdet, axis=1).reshape(
            (E,) + (1,) * (v.ndim - 2))
        acc = np.zeros((self.mesh.n_nodes,) + emean.shape[1:])
        cnt = np.zeros(self.mesh.n_nodes)
        for k in range(8):
            np.add.at(acc, self.mesh.elements[:, k], emean)
            np.add.at(cnt, self.mesh.elements[:, k], 1)
        return acc / cnt.reshape((-1,) + (1,) * (acc.ndim - 1))


@dataclass
class Dirichlet:
    dofs: np.ndarray
    values: np.ndarray


def tensile_constraints(model: FEModel, displacement: float) -> Dirichlet:
    """Clamped left grip; axial ``displacement`` on the right grip, laterally free."""
    left = model.mesh.sets["left_grip"]
    right = model.mesh.sets["right_grip"]
    dofs = np.concatenate([model.dof(left, 0), model.dof(left, 1), model.dof(right, 0)])
    vals = np.concatenate([np.zeros(2 * len(left)), np.full(len(right), displacement)])
    return Dirichlet(dofs, vals)


@dataclass
class StepResult:
    field: GlobalField
    history: QuadratureState
    residual: np.ndarray
    newton_iterations: int
    cuts: int
    tangent: sp.csr_matrix | None = None


class GlobalNonConvergence(RuntimeError):
    pass


def _newton(model: FEModel, fld: GlobalField, history: QuadratureState, bc: Dirichlet,
            tol: float, max_iter: int, K0: sp.csr_matrix | None = None):
    x = fld.x.copy()
    free = np.setdiff1d(np.arange(model.ndof), bc.dofs)
    if K0 is not None:
        # tangent predictor: spread the boundary increment through the converged tangent
        dxc = bc.values - x[bc.dofs]
        x[free] -= spla.spsolve(K0[free][:, free].tocsc(), K0[free][:, bc.dofs] @ dxc)
    x[bc.dofs] = bc.values
    rnorm = np.inf
    for it in range(max_iter + 1):
        asm = model.assemble(GlobalField(x, model.n_sys), history, tangent=True)
        rnorm = float(np.max(np.abs(asm.residual[free])))
        log.debug("global Newton %d: |R|_inf = %.3e", it, rnorm)
        if not np.isfinite(rnorm):
            break
        if rnorm <= tol:
            return GlobalField(x, model.n_sys), asm, it
        if it == max_iter:
            break
        Kff = asm.tangent[free][:, free].tocsc()
        dx = spla.spsolve(Kff, -asm.residual[free])
        if not np.all(np.isfinite(dx)):
            break
        x[free] += dx
    raise GlobalNonConvergence(f"no global convergence within {max_iter} iterations (|R| = {rnorm:.3e})")


def assemble_and_solve_step(model: FEModel, fld: GlobalField, history: QuadratureState,
                            bc: Dirichlet, bc_prev: Dirichlet | None = None, max_iter: int = 25,
                            max_halvings: int = 4, tol: float | None = None,
                            tangent: sp.csr_matrix | None = None) -> StepResult:
    """Advance one load step; on failure the increment is halved (up to
    ``max_halvings`` times) and applied in sub-steps.

    ``tangent``, the converged tangent of the previous step, enables a
    linearized predictor for the free dofs.
    """
    tol = 1e-8 * model.params.mu * model.element_area if tol is None else tol
    start = bc.values * 0 if bc_prev is None else bc_prev.values
    target = bc.values
    cuts = 0
    iters = 0
    done, frac = 0.0, 1.0
    residual = None
    while done < 1.0 - 1e-12:
        t = min(done + frac, 1.0)
        sub = Dirichlet(bc.dofs, start + t * (target - start))
        try:
            new, asm, it = _newton(model, fld, history, sub, tol, max_iter, tangent)
        except (GlobalNonConvergence, NonConvergenceError, ValueError, np.linalg.LinAlgError) as exc:
            if cuts >= max_halvings:
                raise GlobalNonConvergence(f"step failed after {cuts} halvings: {exc}") from exc
            cuts += 1
            frac *= 0.5
            log.info("cutting load increment (halving %d)", cuts)
            continue
        iters += it
        fld = new
        history = QuadratureState(asm.states, asm.dlambda, asm.P)
        residual, tangent = asm.residual, asm.tangent
        done = t
    return StepResult(fld, history, residual, iters, cuts, tangent)


def reaction_force(model: FEModel, residual: np.ndarray, nodes, component: int = 0) -> float:
    """Sum of residual entries on the given nodal dofs, in N/um."""
    return float(np.sum(residual[model.dof(nodes, component)])) * FORCE_TO_N_PER_UM


def write_vtk(path, model: FEModel, fld: GlobalField, history: QuadratureState, title: str = "slipform"):
    """Legacy ASCII unstructured grid with nodal u, summed slip and |s|."""
    nodes = model.mesh.nodes
    els = model.mesh.elements
    A = model.nodal_average(history.crystal.A)
    snorm = np.linalg.norm(fld.s, axis=1)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(nodes)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in nodes]
    lines.append(f"CELLS {len(els)} {9 * len(els)}")
    lines += ["8 " + " ".join(map(str, e)) for e in els]
    lines.append(f"CELL_TYPES {len(els)}")
    lines += [str(_VTK_CELL_TYPE)] * len(els)
    lines.append(f"CELL_DATA {len(els)}")
    lines += ["SCALARS element_id int 1", "LOOKUP_TABLE default"] + [str(i) for i in range(len(els))]
    lines.append(f"POINT_DATA {len(nodes)}")
    lines.append("VECTORS u double")
    lines += [f"{a:.17g} {b:.17g} 0" for a, b in fld.u]
    for name, vals in (("alpha_sum", A), ("s_norm", snorm)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in vals]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class TensileLoading:
    elongation: float = 0.02
    n_steps: int = 100
    max_newton: int = 25
    max_halvings: int = 4


@dataclass
class TensileRecord:
    step: int
    displacement: float
    force: float
    newton_iterations: int


def run_tensile_fem(model: FEModel, loading: TensileLoading = TensileLoading(), callback=None):
    """Monotonic displacement-controlled tensile test.

    ``callback(step, field, history)`` is invoked after every converged step.
    Returns the force-displacement records and the final field and history.
    """
    fld = GlobalField.zeros(model.mesh.n_nodes, model.n_sys)
    history = model.initial_history()
    X = model.mesh.nodes[:, 0]
    u_end = loading.elongation * (X.max() - X.min())
    records = []
    bc_prev = tensile_constraints(model, 0.0)
    K = model.assemble(fld, history).tangent
    for k in range(1, loading.n_steps + 1):
        u = u_end * k / loading.n_steps
        bc = tensile_constraints(model, u)
        step = assemble_and_solve_step(model, fld, history, bc, bc_prev, loading.max_newton,
                                       loading.max_halvings, tangent=K)
        fld, history, bc_prev, K = step.field, step.history, bc, step.tangent
        f = reaction_force(model, step.residual, model.mesh.sets["right_grip"])
        records.append(TensileRecord(k, u, f, step.newton_iterations))
        log.info("tensile step %d: u = %.6g um, force = %.6g N/um, iterations %d",
                 k, u, f, step.newton_iterations)
        if callback is not None:
            callback(k, fld, history)
    return records, fld, history


def plastic_zone_width(model: FEModel, history: QuadratureState, threshold: float = 1e-4) -> float:
    """Axial extent (reference x) of the Gauss points with summed slip above ``threshold``."""
    hot = history.crystal.A > threshold
    if not np.any(hot):
        return 0.0
    x = model.X_qp[hot, 0]
    return float(x.max() - x.min())


def micromorphic_mismatch(model: FEModel, fld: GlobalField, history: QuadratureState,
                          threshold: float = 1e-4) -> float:
    """Relative L2 distance between slips and micromorphic values over the plastic zone."""
    hot = history.crystal.A > threshold
    if not np.any(hot):
        return 0.0
    _, s, _ = model.interpolate(fld)
    w = model.wdet.ravel()[hot]
    a = history.crystal.alpha[hot]
    num = np.sum(w[:, None] * (a - s[hot]) ** 2)
    den = np.sum(w[:, None] * a**2)
    return float(np.sqrt(num / den))

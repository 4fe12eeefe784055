"""Slip-system catalogues, crystal orientations and Schmid projections.

Every catalogue lists both slip senses as separate systems, so all yield
functions are one-sided and all slip increments are nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_S2 = np.sqrt(2.0)
_S3 = np.sqrt(3.0)


@dataclass(frozen=True)
class SlipSystem:
    """Unit slip direction ``M`` and unit plane normal ``N``."""

    M: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        N = np.asarray(self.N, dtype=float)
        if M.shape != (3,) or N.shape != (3,):
            raise ValueError("slip vectors must be 3-vectors")
        if abs(np.linalg.norm(M) - 1.0) > 1e-14 or abs(np.linalg.norm(N) - 1.0) > 1e-14:
            raise ValueError("slip vectors must have unit length")
        if abs(M @ N) > 1e-14:
            raise ValueError("slip direction must lie in the slip plane")
        M.setflags(write=False)
        N.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)

    @property
    def schmid_tensor(self) -> np.ndarray:
        return np.outer(self.M, self.N)


@dataclass(frozen=True)
class SlipCatalogue:
    """Ordered, index-stable list of slip systems.

    The stacked arrays ``M``, ``N`` (n, 3) and ``Z`` (n, 3, 3), with
    ``Z[i] = M[i] (x) N[i]``, are what the numerical kernels consume.
    """

    name: str
    systems: tuple[SlipSystem, ...]
    M: np.ndarray = field(init=False, repr=False)
    N: np.ndarray = field(init=False, repr=False)
    Z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        systems = tuple(self.systems)
        if not systems:
            raise ValueError("empty slip catalogue")
        M = np.array([s.M for s in systems])
        N = np.array([s.N for s in systems])
        Z = np.einsum("ia,ib->iab", M, N)
        for arr in (M, N, Z):
            arr.setflags(write=False)
        object.__setattr__(self, "systems", systems)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "Z", Z)

    def __len__(self) -> int:
        return len(self.systems)

    def __getitem__(self, i: int) -> SlipSystem:
        return self.systems[i]

    @property
    def n_sys(self) -> int:
        return len(self.systems)


def _catalogue(name, pairs):
    return SlipCatalogue(name, tuple(SlipSystem(np.asarray(m, float), np.asarray(n, float)) for m, n in pairs))


# Systems 1-12 of the FCC crystal; systems 13-24 are the same planes with the
# slip direction reversed.
_FCC_POSITIVE = [
    ((-1, 1, 0), (1, 1, 1)),
    ((1, 0, -1), (1, 1, 1)),
    ((0, -1, 1), (1, 1, 1)),
    ((-1, -1, 0), (1, -1, -1)),
    ((1, 0, 1), (1, -1, -1)),
    ((0, 1, -1), (1, -1, -1)),
    ((1, 1, 0), (-1, 1, -1)),
    ((-1, 0, 1), (-1, 1, -1)),
    ((0, -1, -1), (-1, 1, -1)),
    ((1, -1, 0), (-1, -1, 1)),
    ((-1, 0, -1), (-1, -1, 1)),
    ((0, 1, 1), (-1, -1, 1)),
]


def fcc_catalogue() -> SlipCatalogue:
    """The 24 one-sided {111}<110> systems of an FCC crystal."""
    pairs = []
    for sign in (1.0, -1.0):
        for m, n in _FCC_POSITIVE:
            pairs.append((sign * np.array(m) / _S2, np.array(n) / _S3))
    return _catalogue("fcc24", pairs)


def planar_catalogue(angles_deg=(0.0,), name=None) -> SlipCatalogue:
    """In-plane slip systems for plane-strain tests.

    Each angle gives a slip direction in the x-y plane (measured from e1) with
    the in-plane normal rotated by +90 degrees; both slip senses are added.
    """
    pairs = []
    for sign in (1.0, -1.0):
        for a in angles_deg:
            t = np.deg2rad(a)
            m = np.array([np.cos(t), np.sin(t), 0.0])
            n = np.array([-np.sin(t), np.cos(t), 0.0])
            # exact zeros keep M.N = 0 to machine precision
            m[np.abs(m) < 1e-15] = 0.0
            n[np.abs(n) < 1e-15] = 0.0
            pairs.append((sign * m, n))
    return _catalogue(name or f"planar{len(pairs)}", pairs)


def orthogonal_catalogue() -> SlipCatalogue:
    """Two systems with M(i) perpendicular to N(j) for every pair i, j."""
    e1, e2, e3 = np.eye(3)
    return _catalogue("orthogonal2", [(e1, e2), (e1, e3)])


def single_catalogue() -> SlipCatalogue:
    e1, e2, _ = np.eye(3)
    return _catalogue("single1", [(e1, e2)])


_CATALOGUES = {
    "fcc24": fcc_catalogue,
    "planar2": lambda: planar_catalogue((0.0,), name="planar2"),
    "planar4": lambda: planar_catalogue((30.0, -30.0), name="planar4"),
    "planar6": lambda: planar_catalogue((0.0, 60.0, 120.0), name="planar6"),
    "orthogonal2": orthogonal_catalogue,
    "single1": single_catalogue,
}


def catalogue_names() -> list[str]:
    return sorted(_CATALOGUES)


def get_catalogue(name: str) -> SlipCatalogue:
    try:
        return _CATALOGUES[name]()
    except KeyError:
        raise KeyError(f"unknown slip catalogue {name!r}; choose from {catalogue_names()}") from None


@dataclass(frozen=True)
class Orientation:
    """Euler angles (rad) and the rotation they generate."""

    a: float
    b: float
    c: float
    R0: np.ndarray = field(repr=False)


def _rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rotation_from_euler(a: float, b: float, c: float) -> Orientation:
    """R0 = Rz(c) . Rx(b) . Rz(a); used as the initial plastic deformation gradient."""
    if not np.all(np.isfinite([a, b, c])):
        raise ValueError("Euler angles must be finite")
    R0 = _rz(c) @ _rx(b) @ _rz(a)
    R0.setflags(write=False)
    return Orientation(float(a), float(b), float(c), R0)


def schmid_stress(sigma: np.ndarray, system: SlipSystem) -> float:
    """Resolved shear stress M . Sigma . N."""
    return float(system.M @ np.asarray(sigma) @ system.N)


def schmid_stresses(sigma: np.ndarray, catalogue: SlipCatalogue) -> np.ndarray:
    """All resolved shear stresses; ``sigma`` may carry leading batch axes."""
    return np.einsum("...ab,ia,ib->...i", sigma, catalogue.M, catalogue.N)


def geometry_matrix(catalogue: SlipCatalogue) -> np.ndarray:
    """F_ij = (Mi.Mj)(Ni.Nj) + (Mi.Nj)(Ni.Mj): Schmid-tensor Gram matrix (x2)."""
    M, N = catalogue.M, catalogue.N
    return (M @ M.T) * (N @ N.T) + (M @ N.T) * (N @ M.T)


def numerical_rank(A: np.ndarray, rtol: float = 1e-10) -> int:
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))

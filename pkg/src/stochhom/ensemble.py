"""Stationary random conductance fields with reproducible seeding.

Conductances live on undirected nearest-neighbour edges. Per axis ``k`` a
field stores an array whose entry ``j`` along axis ``k`` is the edge between
site ``j - 1`` and site ``j`` (array coordinates). On a Dirichlet box the
axis has length ``side + 1`` so both faces carry edges to the (clamped)
exterior; on a periodic box it has length ``side`` and index 0 is the wrap
edge.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .lattice import Lattice

_MASK64 = (1 << 64) - 1


class EnsembleKind(str, enum.Enum):
    CHECKERBOARD = "checkerboard"
    POISSON = "poisson_inclusions"
    CONSTANT = "constant"


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters of one stationary ensemble.

    Only the block of the selected ``kind`` is read; the others keep their
    defaults. ``rho`` and ``ell`` are the declared LSI amplitude and
    correlation length and are carried for the record only.
    """

    kind: EnsembleKind = EnsembleKind.CHECKERBOARD
    lam: float = 0.25
    lo: float = 0.25
    hi: float = 1.0
    p_hi: float = 0.5
    intensity: float = 0.1
    inclusion_radius: int = 1
    background: float = 1.0
    inclusion_value: float = 0.25
    rho: float = 1.0
    ell: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        self.validate()

    def validate(self):
        if not 0.0 < self.lam <= 1.0:
            raise EnsembleError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.rho <= 0:
            raise EnsembleError("declared LSI amplitude rho must be positive")
        if self.ell != 1:
            raise EnsembleError("correlation length is fixed to the lattice spacing (ell = 1)")
        if self.kind is EnsembleKind.CHECKERBOARD:
            self._in_range("lo", self.lo)
            self._in_range("hi", self.hi)
            if not 0.0 <= self.p_hi <= 1.0:
                raise EnsembleError(f"p_hi must lie in [0, 1], got {self.p_hi}")
        elif self.kind is EnsembleKind.POISSON:
            self._in_range("background", self.background)
            self._in_range("inclusion_value", self.inclusion_value)
            if self.intensity < 0:
                raise EnsembleError("intensity must be >= 0")
            if int(self.inclusion_radius) != self.inclusion_radius or self.inclusion_radius < 1:
                raise EnsembleError("inclusion_radius must be an integer >= 1")

    def _in_range(self, name, value):
        if not self.lam - 1e-15 <= value <= 1.0 + 1e-15:
            raise EnsembleError(f"{name}={value} outside [lambda, 1] = [{self.lam}, 1]")

    def active_params(self) -> dict:
        base = {"kind": self.kind.value, "lam": self.lam, "rho": self.rho, "ell": self.ell}
        if self.kind is EnsembleKind.CHECKERBOARD:
            base.update(lo=self.lo, hi=self.hi, p_hi=self.p_hi)
        elif self.kind is EnsembleKind.POISSON:
            base.update(intensity=self.intensity, inclusion_radius=self.inclusion_radius,
                        background=self.background, inclusion_value=self.inclusion_value)
        return base

    @property
    def spec_id(self) -> str:
        blob = json.dumps(self.active_params(), sort_keys=True).encode()
        return f"{self.kind.value}-{hashlib.sha256(blob).hexdigest()[:10]}"

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out


@dataclass
class CoefficientField:
    """One sample of the conductance field on ``lattice``.

    ``faces[k]`` holds the axis-``k`` edges (layout in the module docstring).
    ``site_values`` is kept for site-based ensembles so local resampling can
    rebuild the edges.
    """

    lattice: Lattice
    faces: list
    lam: float
    site_values: np.ndarray | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def backward(self, k: int) -> np.ndarray:
        """Conductance of the edge from x - e_k to x, shape ``lattice.shape``."""
        a = self.faces[k]
        if self.lattice.periodic:
            return a
        return np.take(a, range(0, self.lattice.side), axis=k)

    def forward(self, k: int) -> np.ndarray:
        """Conductance of the edge from x to x + e_k, shape ``lattice.shape``."""
        a = self.faces[k]
        if self.lattice.periodic:
            return np.roll(a, -1, axis=k)
        return np.take(a, range(1, self.lattice.side + 1), axis=k)

    @property
    def conductance(self) -> np.ndarray:
        """Forward-edge conductances as an edge field, shape (dim,) + shape."""
        return np.stack([self.forward(k) for k in range(self.lattice.dim)])

    def all_values(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.faces])

    def check(self):
        vals = self.all_values()
        if vals.min() < self.lam * (1 - 1e-12) or vals.max() > 1 + 1e-12:
            raise EnsembleError("conductance outside [lambda, 1]")
        return self

    def copy(self) -> "CoefficientField":
        sv = None if self.site_values is None else self.site_values.copy()
        return CoefficientField(self.lattice, [a.copy() for a in self.faces], self.lam,
                                sv, self.seed, dict(self.meta))


def mix_seed(master_seed: int, index: int) -> int:
    """Child seed for sample ``index``: a splitmix64 finalisation of both inputs."""
    z = (int(master_seed) * 0x9E3779B97F4A7C15 + (int(index) + 1) * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def face_shape(lattice: Lattice, k: int) -> tuple[int, ...]:
    shape = list(lattice.shape)
    if not lattice.periodic:
        shape[k] += 1
    return tuple(shape)


def harmonic(a, b):
    return 2.0 * a * b / (a + b)


def edges_from_sites(lattice: Lattice, omega: np.ndarray) -> list:
    """Harmonic-mean edge rule. ``omega`` covers the box plus one exterior layer
    (Dirichlet) or exactly the torus (periodic)."""
    faces = []
    d, s = lattice.dim, lattice.side
    for k in range(d):
        if lattice.periodic:
            faces.append(harmonic(np.roll(omega, 1, axis=k), omega))
            continue
        inner = [slice(1, s + 1)] * d
        left, right = list(inner), list(inner)
        left[k] = slice(0, s + 1)
        right[k] = slice(1, s + 2)
        faces.append(harmonic(omega[tuple(left)], omega[tuple(right)]))
    return faces


def site_shape(lattice: Lattice) -> tuple[int, ...]:
    return lattice.shape if lattice.periodic else (lattice.side + 2,) * lattice.dim


def _sample_checkerboard(spec, lattice, rng):
    draws = rng.random(site_shape(lattice))
    omega = np.where(draws < spec.p_hi, spec.hi, spec.lo)
    return edges_from_sites(lattice, omega), omega


def _edge_midpoints(lattice: Lattice, k: int) -> np.ndarray:
    """Midpoints of the axis-k edges in lattice coordinates, flattened like ``faces[k]``."""
    r, d = lattice.radius, lattice.dim
    axes = []
    for j, n in enumerate(face_shape(lattice, k)):
        coords = np.arange(n, dtype=float) - r
        if j == k:
            coords = coords - 0.5
        axes.append(coords)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def poisson_mask(spec: EnsembleSpec, lattice: Lattice, rng) -> list:
    """Boolean per-face masks of edges covered by an inclusion."""
    d, r, rad = lattice.dim, lattice.radius, spec.inclusion_radius
    margin = 0 if lattice.periodic else rad + 1
    cell_axis = np.arange(-r - margin, r + margin + 1)
    cells = np.stack([g.ravel() for g in np.meshgrid(*([cell_axis] * d), indexing="ij")], axis=1)
    counts = rng.poisson(spec.intensity, size=len(cells))
    total = int(counts.sum())
    offsets = rng.random((total, d)) - 0.5
    points = np.repeat(cells, counts, axis=0) + offsets
    masks = []
    for k in range(d):
        mids = _edge_midpoints(lattice, k)
        if total == 0:
            masks.append(np.zeros(face_shape(lattice, k), dtype=bool))
            continue
        if lattice.periodic:
            s = lattice.side
            tree = cKDTree(np.mod(points + r, s), boxsize=s)
            dist, _ = tree.query(np.mod(mids + r, s), k=1, distance_upper_bound=rad + 1e-9)
        else:
            tree = cKDTree(points)
            dist, _ = tree.query(mids, k=1, distance_upper_bound=rad + 1e-9)
        masks.append(np.isfinite(dist).reshape(face_shape(lattice, k)))
    return masks


def sample(spec: EnsembleSpec, lattice: Lattice, seed: int) -> CoefficientField:
    """Draw one coefficient field; identical inputs give identical fields."""
    spec.validate()
    rng = np.random.default_rng(int(seed) & _MASK64)
    omega = None
    if spec.kind is EnsembleKind.CONSTANT:
        faces = [np.ones(face_shape(lattice, k)) for k in range(lattice.dim)]
    elif spec.kind is EnsembleKind.CHECKERBOARD:
        faces, omega = _sample_checkerboard(spec, lattice, rng)
    else:
        masks = poisson_mask(spec, lattice, rng)
        faces = [np.where(m, spec.inclusion_value, spec.background).astype(float) for m in masks]
    return CoefficientField(lattice, faces, spec.lam, omega, int(seed)).check()


def constant_field(lattice: Lattice, value: float = 1.0, lam: float | None = None) -> CoefficientField:
    faces = [np.full(face_shape(lattice, k), float(value)) for k in range(lattice.dim)]
    return CoefficientField(lattice, faces, value if lam is None else lam)


def covered_fraction(spec: EnsembleSpec, lattice: Lattice, seeds) -> float:
    """Monte Carlo fraction of edges lying inside an inclusion."""
    if spec.kind is not EnsembleKind.POISSON:
        raise EnsembleError("covered_fraction needs a poisson_inclusions ensemble")
    fracs = []
    for s in seeds:
        masks = poisson_mask(spec, lattice, np.random.default_rng(int(s) & _MASK64))
        fracs.append(sum(m.sum() for m in masks) / sum(m.size for m in masks))
    return float(np.mean(fracs))


def void_probability(spec: EnsembleSpec, dim: int) -> float:
    """P(point not covered) = exp(-intensity * |B_r|) for the Poisson ensemble."""
    r = spec.inclusion_radius
    vol = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * r ** dim
    return math.exp(-spec.intensity * vol)

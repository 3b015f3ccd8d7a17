"""Finite boxes of Z^d with discrete gradient and divergence.

A lattice is the box [-radius, radius]^dim with unit spacing. Sites are
stored row-major, so a site field is an array of shape ``lattice.shape``
and an edge field is an array of shape ``(dim,) + lattice.shape`` whose
entry ``[k][x]`` lives on the forward edge from ``x`` to ``x + e_k``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class Boundary(str, enum.Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    dim: int
    radius: int
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise LatticeError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.radius) != self.radius or self.radius < 1:
            raise LatticeError(f"radius must be an integer >= 1, got {self.radius}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.side ** self.dim

    @property
    def n_edges(self) -> int:
        return self.n_sites * self.dim

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    # -- indexing -------------------------------------------------------

    def wrap(self, site) -> tuple[int, ...]:
        """Map a site into the box (periodic only); raise if it is outside."""
        site = tuple(int(c) for c in site)
        if len(site) != self.dim:
            raise LatticeError(f"site {site} has wrong dimension")
        if self.periodic:
            s, r = self.side, self.radius
            return tuple((c + r) % s - r for c in site)
        if not self.contains(site):
            raise LatticeError(f"site {site} outside box of radius {self.radius}")
        return site

    def contains(self, site) -> bool:
        return all(-self.radius <= int(c) <= self.radius for c in site)

    def index(self, site) -> int:
        site = self.wrap(site)
        return int(np.ravel_multi_index(tuple(c + self.radius for c in site), self.shape))

    def site(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_sites:
            raise LatticeError(f"index {index} out of range")
        return tuple(int(c) - self.radius for c in np.unravel_index(index, self.shape))

    def array_index(self, site) -> tuple[int, ...]:
        """Position of ``site`` in an array of shape ``self.shape``."""
        return tuple(c + self.radius for c in self.wrap(site))

    def coords(self) -> np.ndarray:
        """Integer coordinates of all sites, shape (n_sites, dim), row-major."""
        axes = [np.arange(-self.radius, self.radius + 1)] * self.dim
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def distance_from_origin(self) -> np.ndarray:
        """Euclidean |x| for every site, shape ``self.shape``."""
        return np.sqrt((self.coords() ** 2).sum(axis=1)).reshape(self.shape)

    # -- fields ---------------------------------------------------------

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def delta(self, site) -> np.ndarray:
        u = self.zeros()
        u[self.array_index(site)] = 1.0
        return u

    def check_site_field(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            if u.size == self.n_sites and u.ndim == 1:
                return u.reshape(self.shape)
            raise LatticeError(f"site field has shape {u.shape}, expected {self.shape}")
        if not np.all(np.isfinite(u)):
            raise LatticeError("site field has non-finite values")
        return u

    def check_edge_field(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        if F.shape != (self.dim,) + self.shape:
            raise LatticeError(f"edge field has shape {F.shape}")
        if not np.all(np.isfinite(F)):
            raise LatticeError("edge field has non-finite values")
        return F

    def shift(self, u: np.ndarray, axis: int, step: int) -> np.ndarray:
        """Return v with v(x) = u(x + step*e_axis); exterior values are 0 (Dirichlet)."""
        if self.periodic:
            return np.roll(u, -step, axis=axis)
        out = np.zeros_like(u)
        n = u.shape[axis]
        src = [slice(None)] * u.ndim
        dst = [slice(None)] * u.ndim
        if step >= 0:
            src[axis], dst[axis] = slice(step, n), slice(0, n - step)
        else:
            src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
        out[tuple(dst)] = u[tuple(src)]
        return out

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Forward differences u(x + e_k) - u(x) on every edge."""
        u = self.check_site_field(u)
        return np.stack([self.shift(u, k, 1) - u for k in range(self.dim)])

    def divergence(self, F: np.ndarray) -> np.ndarray:
        """Negative adjoint of :meth:`gradient`: sum_k F_k(x) - F_k(x - e_k)."""
        F = self.check_edge_field(F)
        out = np.zeros(self.shape)
        for k in range(self.dim):
            out += F[k] - self.shift(F[k], k, -1)
        return out

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return self.divergence(self.gradient(u))


def build_lattice(dim: int, radius: int, boundary="dirichlet") -> Lattice:
    return Lattice(dim, radius, Boundary(boundary))


@lru_cache(maxsize=None)
def ball_offsets(dim: int, L: float) -> tuple[tuple[int, ...], ...]:
    """Integer points of the closed Euclidean ball of radius ``L``, lexicographic."""
    r = int(np.floor(L))
    pts = [p for p in itertools.product(range(-r, r + 1), repeat=dim)
           if sum(c * c for c in p) <= L * L + 1e-12]
    return tuple(pts)


def ball(center, L: float) -> list[tuple[int, ...]]:
    center = tuple(int(c) for c in center)
    return [tuple(c + o for c, o in zip(center, off)) for off in ball_offsets(len(center), L)]


def unit_vector(dim: int, k: int, sign: int = 1) -> tuple[int, ...]:
    return tuple(sign if j == k else 0 for j in range(dim))


def octahedral_images(site) -> list[tuple[int, ...]]:
    """All images of ``site`` under coordinate permutations and sign flips."""
    out = set()
    for perm in itertools.permutations(site):
        for signs in itertools.product((1, -1), repeat=len(site)):
            out.add(tuple(s * c for s, c in zip(signs, perm)))
    return sorted(out)

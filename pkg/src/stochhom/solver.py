"""Massive divergence-form operator mu - div(a grad) and its Krylov solver.

The operator acts on site fields as

    (apply u)(x) = mu u(x) + sum_k a(x, k)(u(x) - u(x + e_k))
                           + a(x - e_k, k)(u(x) - u(x - e_k)),

with u = 0 outside a Dirichlet box (both faces carry exterior edges) and
wrap-around on a periodic box. It is symmetric with spectrum in
[mu, mu + 4 dim], so conjugate gradients applies. The default
preconditioner is the constant-coefficient operator mu + a_ref(-Delta),
inverted exactly by a sine transform (Dirichlet) or FFT (periodic); it
keeps the iteration count bounded by the conductance contrast instead of
1/mu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .ensemble import CoefficientField
from .lattice import Lattice


class NonConvergence(RuntimeError):
    def __init__(self, message, residual=float("nan"), iterations=0, sample=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.sample = sample


@dataclass(frozen=True)
class ProblemSpec:
    mu: float
    tolerance: float = 1e-10
    max_iterations: int | None = None
    preconditioner: str = "spectral"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not 0 < self.tolerance <= 1e-4:
            raise ValueError(f"tolerance must lie in (0, 1e-4], got {self.tolerance}")
        if self.preconditioner not in ("spectral", "jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


class LinearOperator:
    """mu - div(A grad) on the lattice carried by ``field``."""

    def __init__(self, field: CoefficientField, mu: float):
        if not mu > 0:
            raise ValueError("mu must be > 0")
        self.field = field
        self.lattice: Lattice = field.lattice
        self.mu = float(mu)
        d = self.lattice.dim
        self.fwd = [field.forward(k) for k in range(d)]
        self.bwd = [field.backward(k) for k in range(d)]
        self.diag = self.mu + sum(self.fwd) + sum(self.bwd)
        vals = field.all_values()
        self.a_ref = math.sqrt(vals.min() * vals.max())
        self._eig = None

    @property
    def shape(self):
        return self.lattice.shape

    def matvec(self, U: np.ndarray) -> np.ndarray:
        """Apply to a batch ``U`` of shape (m,) + lattice.shape."""
        out = self.diag * U
        periodic = self.lattice.periodic
        for k in range(self.lattice.dim):
            ax = k + 1
            if periodic:
                out -= self.fwd[k] * np.roll(U, -1, axis=ax)
                out -= self.bwd[k] * np.roll(U, 1, axis=ax)
                continue
            n = U.shape[ax]
            lo = [slice(None)] * U.ndim
            hi = [slice(None)] * U.ndim
            lo[ax], hi[ax] = slice(0, n - 1), slice(1, n)
            lo_a, hi_a = tuple(lo[1:]), tuple(hi[1:])
            lo, hi = tuple(lo), tuple(hi)
            out[lo] -= self.fwd[k][lo_a] * U[hi]
            out[hi] -= self.bwd[k][hi_a] * U[lo]
        return out

    def to_sparse(self) -> sp.csr_matrix:
        lat = self.lattice
        n = lat.n_sites
        idx = np.arange(n).reshape(lat.shape)
        rows, cols, vals = [idx.ravel()], [idx.ravel()], [self.diag.ravel()]
        for k in range(lat.dim):
            if lat.periodic:
                nb = np.roll(idx, -1, axis=k)
                a = self.fwd[k]
            else:
                sl = [slice(None)] * lat.dim
                sl[k] = slice(0, lat.side - 1)
                sl_nb = list(sl)
                sl_nb[k] = slice(1, lat.side)
                nb = idx[tuple(sl_nb)]
                a = self.fwd[k][tuple(sl)]
                idx_k = idx[tuple(sl)]
            src = idx if lat.periodic else idx_k
            rows += [src.ravel(), nb.ravel()]
            cols += [nb.ravel(), src.ravel()]
            vals += [-a.ravel(), -a.ravel()]
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        return m.tocsr()

    def dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    # -- preconditioners -------------------------------------------------

    def _eigenvalues(self):
        if self._eig is None:
            lat = self.lattice
            s = lat.side
            if lat.periodic:
                one = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(s) / s)
                last = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(s // 2 + 1) / s)
            else:
                one = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, s + 1) / (s + 1))
                last = one
            grids = np.meshgrid(*([one] * (lat.dim - 1) + [last]), indexing="ij")
            self._eig = self.mu + self.a_ref * sum(grids)
        return self._eig

    def precondition(self, R: np.ndarray, kind: str) -> np.ndarray:
        if kind == "none":
            return R.copy()
        if kind == "jacobi":
            return R / self.diag
        axes = tuple(range(1, R.ndim))
        eig = self._eigenvalues()
        if self.lattice.periodic:
            F = scipy.fft.rfftn(R, axes=axes, workers=1)
            F /= eig
            return scipy.fft.irfftn(F, s=self.lattice.shape, axes=axes, workers=1)
        F = scipy.fft.dstn(R, type=1, axes=axes, norm="ortho", workers=1)
        F /= eig
        return scipy.fft.idstn(F, type=1, axes=axes, norm="ortho", workers=1)


def _colsum(X, Y):
    m = X.shape[0]
    return (X * Y).reshape(m, -1).sum(axis=1)


def apply(op: LinearOperator, u: np.ndarray) -> np.ndarray:
    u = op.lattice.check_site_field(u)
    return op.matvec(u[None])[0]


def solve_many(op: LinearOperator, F: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Preconditioned CG on a batch of right-hand sides, shape (m,) + lattice.shape.

    Columns are iterated in lockstep with per-column step sizes; a column
    stops updating once its relative residual meets the tolerance. The
    final answer is accepted only if the true residual passes too.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[1:] != op.shape:
        raise ValueError(f"rhs batch has shape {F.shape}, expected (m,)+{op.shape}")
    m = F.shape[0]
    max_it = spec.max_iterations or 10 * op.lattice.n_sites
    bnorm = np.sqrt(_colsum(F, F))
    target = spec.tolerance * bnorm
    bshape = (m,) + (1,) * op.lattice.dim

    X = np.zeros_like(F)
    R = F.copy()
    it = 0
    for _attempt in range(3):
        active = np.sqrt(_colsum(R, R)) > target
        if not active.any():
            break
        Z = op.precondition(R, spec.preconditioner)
        P = Z.copy()
        rz = _colsum(R, Z)
        while it < max_it:
            it += 1
            Q = op.matvec(P)
            pq = _colsum(P, Q)
            alpha = np.where(active, rz / np.where(active, pq, 1.0), 0.0)
            X += alpha.reshape(bshape) * P
            R -= alpha.reshape(bshape) * Q
            active &= np.sqrt(_colsum(R, R)) > target
            if not active.any():
                break
            Z = op.precondition(R, spec.preconditioner)
            rz_new = _colsum(R, Z)
            beta = np.where(active, rz_new / np.where(active, rz, 1.0), 0.0)
            P = Z + beta.reshape(bshape) * P
            rz = rz_new
        R = F - op.matvec(X)
    res = np.sqrt(_colsum(R, R))
    rel = np.where(bnorm > 0, res / np.where(bnorm > 0, bnorm, 1.0), 0.0)
    if np.any(rel > spec.tolerance):
        raise NonConvergence(f"CG stopped after {it} iterations with relative residual "
                             f"{rel.max():.3e} > {spec.tolerance:.1e}", float(rel.max()), it)
    return X


def solve(op: LinearOperator, f: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    f = op.lattice.check_site_field(f)
    return solve_many(op, f[None], spec)[0]


def green_columns(field: CoefficientField, mu: float, sources, spec: ProblemSpec,
                  op: LinearOperator | None = None) -> np.ndarray:
    """G_mu(., y; A) for every y in ``sources``, batch shape (len(sources),) + shape."""
    lat = field.lattice
    op = op or LinearOperator(field, mu)
    F = np.zeros((len(sources),) + lat.shape)
    for i, y in enumerate(sources):
        F[(i,) + lat.array_index(y)] = 1.0
    return solve_many(op, F, spec)


def green_column(field: CoefficientField, mu: float, y, spec: ProblemSpec) -> np.ndarray:
    return green_columns(field, mu, [y], spec)[0]


def choose_box_radius(mu: float, probe_max: float) -> int:
    """Box radius whose Dirichlet truncation error sits below sampling noise."""
    if not mu > 0:
        raise ValueError("mu must be > 0")
    return int(math.ceil(max(8.0 / math.sqrt(mu), 3.0 * probe_max) - 1e-12))

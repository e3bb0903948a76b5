"""Fixed-magnon-number sectors of the spin-1/2 Heisenberg ferromagnet.

A vector in the N-up sector is stored as one real amplitude per N-subset of
sites, ``a(S) = N! f(S)`` where ``f`` is the symmetric function over ordered
distinct tuples. With this convention the one-magnon shadow is
``phi(i) = sum_{S containing i} a(S)`` and lowering to M magnons is
``b(T) = sum_{S containing T} a(S) / C(N, M)``.

Subsets are encoded as integer bitmasks (bit ``i`` set means site ``i`` is up)
and ordered colexicographically, which is plain numeric order of the masks.
The rank of a subset ``s_0 < s_1 < ... < s_{N-1}`` is ``sum_k C(s_k, k+1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .lattice import Lattice

MAX_SITES = 62
DEFAULT_MEMORY_CEILING = 2**27
DEFAULT_DENSE_CEILING = 4096
INT64_MAX = 2**63 - 1


class ResourceLimitError(MemoryError):
    """A sector basis or propagator would exceed its configured ceiling."""


class KrylovConvergenceError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def binomial_table(n_max: int) -> np.ndarray:
    """Exact table ``C[n, k]`` for ``0 <= n, k <= n_max`` as int64, overflow checked."""
    table = np.zeros((n_max + 1, n_max + 2), dtype=np.int64)
    for n in range(n_max + 1):
        for k in range(n + 1):
            c = math.comb(n, k)
            if c > INT64_MAX:
                raise OverflowError(f"C({n},{k}) does not fit in 64 bits")
            table[n, k] = c
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class SpinConfig:
    """The up-set S0 of a sharp spin state."""

    lattice: Lattice
    up_set: tuple[int, ...]

    def __post_init__(self):
        up = tuple(sorted(int(s) for s in self.up_set))
        if len(set(up)) != len(up):
            raise ValueError(f"duplicate sites in {self.up_set}")
        if up and (up[0] < 0 or up[-1] >= self.lattice.site_count):
            raise ValueError(f"sites {up} outside lattice of {self.lattice.site_count}")
        object.__setattr__(self, "up_set", up)

    @property
    def n_up(self) -> int:
        return len(self.up_set)

    def complement(self) -> "SpinConfig":
        up = set(self.up_set)
        return SpinConfig(self.lattice, tuple(i for i in range(self.lattice.site_count) if i not in up))

    @property
    def mask(self) -> int:
        return sum(1 << i for i in self.up_set)


def _colex_masks(n_sites: int, n_up: int) -> np.ndarray:
    """All masks with ``n_up`` bits among ``n_sites``, ascending."""
    # rows[k] holds the k-subsets of the first m sites, built up site by site
    rows = [np.zeros(1, dtype=np.int64)] + [np.zeros(0, dtype=np.int64)] * n_up
    for m in range(n_sites):
        bit = np.int64(1) << np.int64(m)
        for k in range(min(n_up, m + 1), 0, -1):
            rows[k] = np.concatenate([rows[k], rows[k - 1] | bit])
    return rows[n_up]


class MagnonBasis:
    """Colex-ordered basis of the N-up sector on a lattice."""

    def __init__(self, lat: Lattice, n_up: int, memory_ceiling: int = DEFAULT_MEMORY_CEILING):
        n = lat.site_count
        if not 0 <= n_up <= n:
            raise ValueError(f"n_up={n_up} outside 0..{n}")
        if n > MAX_SITES:
            raise ResourceLimitError(f"{n} sites exceed the {MAX_SITES}-site bitmask limit")
        self.lattice = lat
        self.n_sites = n
        self.n_up = n_up
        self._binom = binomial_table(n)
        self.dimension = int(self._binom[n, n_up])
        if self.dimension > memory_ceiling:
            raise ResourceLimitError(
                f"sector dimension C({n},{n_up})={self.dimension} exceeds ceiling {memory_ceiling}"
            )
        self.masks = _colex_masks(n, n_up)
        self.masks.setflags(write=False)

    def __repr__(self):
        return f"MagnonBasis({self.lattice.spec}, n_up={self.n_up}, dim={self.dimension})"

    def __len__(self):
        return self.dimension

    def rank(self, subset: Iterable[int]) -> int:
        s = sorted(subset)
        if len(s) != self.n_up:
            raise ValueError(f"subset {s} does not have {self.n_up} sites")
        return int(sum(self._binom[site, k + 1] for k, site in enumerate(s)))

    def unrank(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dimension:
            raise IndexError(f"rank {index} outside 0..{self.dimension - 1}")
        out = []
        r = index
        c = self.n_sites
        for k in range(self.n_up, 0, -1):
            c -= 1
            while self._binom[c, k] > r:
                c -= 1
            out.append(c)
            r -= int(self._binom[c, k])
        return tuple(reversed(out))

    def rank_masks(self, masks: np.ndarray) -> np.ndarray:
        """Vectorized colex rank for an array of masks that all have ``n_up`` bits."""
        masks = np.asarray(masks, dtype=np.int64)
        ranks = np.zeros(masks.shape, dtype=np.int64)
        seen = np.zeros(masks.shape, dtype=np.int64)
        for site in range(self.n_sites):
            bit = (masks >> site) & 1
            seen += bit
            ranks += bit * self._binom[site][seen]
        return ranks

    def occupation(self) -> np.ndarray:
        """Boolean matrix (dimension, n_sites): entry [r, i] says site i is up in state r."""
        return ((self.masks[:, None] >> np.arange(self.n_sites)) & 1).astype(bool)

    def sharp_state(self, s0) -> np.ndarray:
        sites = getattr(s0, "up_set", s0)
        a = np.zeros(self.dimension)
        a[self.rank(sites)] = 1.0
        return a

    def check_state(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dimension,):
            raise ValueError(f"state has shape {a.shape}, basis {self!r} needs ({self.dimension},)")
        return a

    @cached_property
    def hamiltonian(self) -> sp.csr_matrix:
        """Sparse H_N = -sum_{i~j} (I_ij - 1): diagonal counts cut edges, hops carry -1."""
        rows, cols = [], []
        diag = np.zeros(self.dimension)
        for i, j in self.lattice.edges:
            pair = (np.int64(1) << np.int64(i)) | (np.int64(1) << np.int64(j))
            cut = np.flatnonzero(((self.masks >> i) ^ (self.masks >> j)) & 1)
            diag[cut] += 1.0
            rows.append(cut)
            cols.append(self.rank_masks(self.masks[cut] ^ pair))
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        off = sp.csr_matrix((-np.ones(len(rows)), (rows, cols)), shape=(self.dimension,) * 2)
        return (off + sp.diags(diag)).tocsr()


@lru_cache(maxsize=256)
def magnon_basis(lat: Lattice, n_up: int) -> MagnonBasis:
    return MagnonBasis(lat, n_up)


def basis_build(lat: Lattice, n_up: int, memory_ceiling: int = DEFAULT_MEMORY_CEILING) -> MagnonBasis:
    if memory_ceiling == DEFAULT_MEMORY_CEILING:
        return magnon_basis(lat, n_up)
    return MagnonBasis(lat, n_up, memory_ceiling)


def hamiltonian_apply(basis: MagnonBasis, a) -> np.ndarray:
    return basis.hamiltonian @ basis.check_state(a)


def _krylov_expm(H, v: np.ndarray, t: float, tol: float, max_dim: int):
    """Lanczos approximation of exp(-t H) v with full reorthogonalization.

    Returns ``(result, err)`` where ``err`` estimates the absolute error as the
    change between successive subspace sizes. Stops once ``err <= tol``, or
    returns the best attempt with its (too large) estimate at ``max_dim``.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy(), 0.0
    m_cap = min(max_dim, len(v))
    V = np.zeros((m_cap + 1, len(v)))
    alpha = np.zeros(m_cap)
    beta = np.zeros(m_cap)
    V[0] = v / beta0
    prev = None
    err = np.inf
    for m in range(m_cap):
        w = H @ V[m]
        alpha[m] = V[m] @ w
        for _ in range(2):
            w -= V[: m + 1].T @ (V[: m + 1] @ w)
        beta[m] = np.linalg.norm(w)
        T = np.diag(alpha[: m + 1]) + np.diag(beta[:m], 1) + np.diag(beta[:m], -1)
        evals, evecs = np.linalg.eigh(T)
        coef = beta0 * (evecs @ (np.exp(-t * evals) * evecs[0]))
        if beta[m] <= 1e-12 * max(1.0, abs(alpha[m])):
            # invariant subspace: the projection is exact
            return V[: m + 1].T @ coef, 0.0
        if prev is not None:
            err = float(np.linalg.norm(coef - np.append(prev, 0.0)))
            if err <= tol:
                return V[: m + 1].T @ coef, err
        prev = coef
        V[m + 1] = w / beta[m]
    return V[:m_cap].T @ prev, err


class SectorPropagator:
    """exp(-mu H_N) on one sector, dense spectral or Krylov.

    ``backend=None`` picks dense when the dimension is at most ``dense_ceiling``.
    """

    def __init__(self, basis: MagnonBasis, backend: str | None = None,
                 dense_ceiling: int = DEFAULT_DENSE_CEILING,
                 krylov_tol: float = 1e-10, krylov_max_dim: int = 120):
        if backend is None:
            backend = "dense" if basis.dimension <= dense_ceiling else "krylov"
        if backend not in ("dense", "krylov"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "dense" and basis.dimension > max(dense_ceiling, 1):
            raise ResourceLimitError(
                f"dense backend requested for dimension {basis.dimension} > ceiling {dense_ceiling}"
            )
        self.basis = basis
        self.backend = backend
        self.krylov_tol = krylov_tol
        self.krylov_max_dim = krylov_max_dim
        self.last_error = 0.0
        if backend == "dense":
            evals, evecs = np.linalg.eigh(basis.hamiltonian.toarray())
            evals[np.abs(evals) < 1e-12] = 0.0
            self.eigenvalues, self.eigenvectors = evals, evecs

    def reconstruction_error(self) -> float:
        v, w = self.eigenvectors, self.eigenvalues
        return float(np.abs((v * w) @ v.T - self.basis.hamiltonian.toarray()).max())

    def evolve(self, a0, mu: float) -> np.ndarray:
        if mu < 0:
            raise ValueError(f"mu must be nonnegative, got {mu}")
        a0 = self.basis.check_state(a0)
        if mu == 0:
            return a0.copy()
        if self.backend == "dense":
            v = self.eigenvectors
            return v @ (np.exp(-mu * self.eigenvalues) * (v.T @ a0))
        return self._evolve_krylov(a0, mu)

    def evolve_many(self, a0, mus) -> np.ndarray:
        """Rows are exp(-mu H) a0 for each mu in ``mus``."""
        a0 = self.basis.check_state(a0)
        if self.backend == "dense":
            v = self.eigenvectors
            coef = v.T @ a0
            return np.array([a0.copy() if mu == 0 else v @ (np.exp(-mu * self.eigenvalues) * coef)
                             for mu in mus])
        return np.array([self.evolve(a0, mu) for mu in mus])

    def _evolve_krylov(self, a0: np.ndarray, mu: float) -> np.ndarray:
        # substeps are halved until each fits in krylov_max_dim; the error
        # budget tol * ||a0|| is shared in proportion to substep length
        H = self.basis.hamiltonian
        budget = self.krylov_tol * np.linalg.norm(a0)
        state, done, step, total_err = a0, 0.0, mu, 0.0
        while done < mu:
            step = min(step, mu - done)
            out, err = _krylov_expm(H, state, step, budget * step / mu, self.krylov_max_dim)
            if err <= budget * step / mu:
                state, done, total_err = out, done + step, total_err + err
                continue
            step /= 2
            if step < mu * 2.0**-20:
                raise KrylovConvergenceError(
                    f"Krylov did not reach tolerance {self.krylov_tol} within "
                    f"{self.krylov_max_dim} vectors (estimate {err:.3g})"
                )
        self.last_error = total_err / budget * self.krylov_tol if budget else 0.0
        return state


@lru_cache(maxsize=128)
def sector_propagator(lat: Lattice, n_up: int, backend: str | None = None,
                      dense_ceiling: int = DEFAULT_DENSE_CEILING,
                      krylov_tol: float = 1e-10) -> SectorPropagator:
    return SectorPropagator(magnon_basis(lat, n_up), backend, dense_ceiling, krylov_tol)


def evolve(prop: SectorPropagator, a0, mu: float) -> np.ndarray:
    return prop.evolve(a0, mu)


def expectation_p(basis: MagnonBasis, a) -> np.ndarray:
    """Normalized spin-up probability per site, sum_{S contains i} a(S)^2 / ||a||^2."""
    a = basis.check_state(a)
    w = a * a
    total = w.sum()
    if not total > 0:
        raise ValueError("expectation of a zero-norm state")
    return _site_sums(basis, w) / total


def _site_sums(basis: MagnonBasis, values: np.ndarray) -> np.ndarray:
    return np.array([values[((basis.masks >> i) & 1).astype(bool)].sum()
                     for i in range(basis.n_sites)])


def project_field(basis: MagnonBasis, a) -> np.ndarray:
    """N * P_{N,1} a as a site field: phi(i) = sum_{S contains i} a(S)."""
    if basis.n_up < 1:
        raise ValueError("project_field needs at least one magnon")
    return _site_sums(basis, basis.check_state(a))


def _lower_once(basis: MagnonBasis, a: np.ndarray, target: MagnonBasis) -> np.ndarray:
    """(R a)(T) = sum over sites i outside T of a(T + {i})."""
    out = np.zeros(target.dimension)
    for i in range(basis.n_sites):
        has = np.flatnonzero((basis.masks >> i) & 1)
        np.add.at(out, target.rank_masks(basis.masks[has] ^ (np.int64(1) << np.int64(i))), a[has])
    return out


def project_sector(basis: MagnonBasis, a, m: int) -> np.ndarray:
    """P_{N,M} in the amplitude convention: b(T) = sum_{S containing T} a(S) / C(N, M)."""
    n = basis.n_up
    if not 1 <= m <= n:
        raise ValueError(f"target magnon number {m} outside 1..{n}")
    b = basis.check_state(a).copy()
    cur = basis
    for k in range(n - 1, m - 1, -1):
        nxt = magnon_basis(basis.lattice, k)
        b = _lower_once(cur, b, nxt)
        cur = nxt
    # each superset was reached by (N-M)! removal orders
    return b / (math.factorial(n - m) * math.comb(n, m))


def projection_matrix(basis: MagnonBasis, m: int) -> np.ndarray:
    """Dense matrix of P_{N,M} (rows: M-basis, columns: N-basis)."""
    return np.column_stack([project_sector(basis, e, m) for e in np.eye(basis.dimension)])


def q_flip(basis: MagnonBasis, a) -> tuple[MagnonBasis, np.ndarray]:
    """Global spin flip: returns the complementary basis and b(S) = a(complement of S)."""
    a = basis.check_state(a)
    target = magnon_basis(basis.lattice, basis.n_sites - basis.n_up)
    full = (np.int64(1) << np.int64(basis.n_sites)) - 1
    # complementing reverses numeric order of masks, so this is a reversal
    out = np.empty_like(a)
    out[target.rank_masks(full ^ basis.masks)] = a
    return target, out

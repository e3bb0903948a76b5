"""Lattice heat equation, the rho transform, and field comparisons."""
from __future__ import annotations

from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy.integrate import solve_ivp

from .lattice import Lattice, LatticeError, _check_field, laplacian_apply


class HeatPropagator:
    """Spectral solution operator exp(mu * Laplacian) for one lattice.

    The eigendecomposition is computed once; ``solve`` is then a pair of
    matrix-vector products for any mu.
    """

    def __init__(self, lat: Lattice):
        self.lattice = lat
        evals, evecs = np.linalg.eigh(lat.laplacian_matrix)
        # eigh returns ascending order, so the zero mode sits last
        evals[-1] = 0.0 if abs(evals[-1]) < 1e-10 else evals[-1]
        self.eigenvalues = evals
        self.eigenvectors = evecs
        for arr in (self.eigenvalues, self.eigenvectors):
            arr.setflags(write=False)

    def reconstruction_error(self) -> float:
        v, w = self.eigenvectors, self.eigenvalues
        return float(np.abs((v * w) @ v.T - self.lattice.laplacian_matrix).max())

    def solve(self, initial, mu: float) -> np.ndarray:
        if mu < 0:
            raise ValueError(f"mu must be nonnegative, got {mu}")
        f0 = _check_field(self.lattice, initial)
        if mu == 0:
            return f0.copy()
        v = self.eigenvectors
        return v @ (np.exp(mu * self.eigenvalues) * (v.T @ f0))


@lru_cache(maxsize=64)
def heat_propagator(lat: Lattice) -> HeatPropagator:
    return HeatPropagator(lat)


def indicator(lat: Lattice, sites: Iterable[int]) -> np.ndarray:
    f = np.zeros(lat.site_count)
    idx = list(sites)
    if idx and (min(idx) < 0 or max(idx) >= lat.site_count):
        raise LatticeError(f"sites {idx} outside lattice of {lat.site_count} sites")
    f[idx] = 1.0
    return f


def heat_solve(prop: HeatPropagator, s0, mu: float) -> np.ndarray:
    """phi_mu = exp(mu * Laplacian) applied to the indicator of the up-set ``s0``.

    ``s0`` may be a SpinConfig or any iterable of site indices.
    """
    sites = getattr(s0, "up_set", s0)
    return prop.solve(indicator(prop.lattice, sites), mu)


def heat_solve_ode(lat: Lattice, initial, mu: float, rtol=1e-12, atol=1e-14) -> np.ndarray:
    """Cross-check path: integrate d(phi)/d(mu) = Laplacian(phi) with adaptive RK45."""
    f0 = _check_field(lat, initial)
    if mu == 0:
        return f0.copy()
    sol = solve_ivp(
        lambda _, y: laplacian_apply(lat, y), (0.0, mu), f0,
        method="RK45", rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


def rho_transform(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    sq = phi * phi
    return sq / (sq + (1.0 - phi) ** 2)


def field_gap(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.abs(a - b).max())


def flip_field(f) -> np.ndarray:
    return 1.0 - np.asarray(f, dtype=float)

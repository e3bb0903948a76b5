"""Experiments comparing exact spin expectations with heat-equation approximants.

Three sup-norm gaps are tracked along an imaginary-time grid:

* ``g1 = |<p>_mu - rho_mu|``, the product-state (average-field) approximant;
* ``g2 = |<p>_mu - phi_mu|``, the bare heat solution;
* ``g4 = |<p>_mu - phi_{mu/2}|``, the half-time heat solution.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .heatfield import field_gap, heat_propagator, heat_solve, rho_transform
from .lattice import Lattice, laplacian_apply
from .magnon import (
    SpinConfig,
    expectation_p,
    magnon_basis,
    sector_propagator,
)

ZERO_GAP = 1e-13
VANISHING = 1e-13
MAX_FULL_SPACE_SITES = 20
GOLDEN = (math.sqrt(5) - 1) / 2


def exact_expectations(lat: Lattice, s0, mus, backend=None, dense_ceiling=4096,
                       krylov_tol=1e-10) -> np.ndarray:
    """Rows of <p_i>_mu for each mu, starting from the sharp state on ``s0``."""
    sites = tuple(sorted(getattr(s0, "up_set", s0)))
    n_up = len(sites)
    if n_up in (0, lat.site_count):
        # fully polarized: H psi0 = 0
        return np.tile(np.full(lat.site_count, float(n_up > 0)), (len(mus), 1))
    basis = magnon_basis(lat, n_up)
    prop = sector_propagator(lat, n_up, backend, dense_ceiling, krylov_tol)
    states = prop.evolve_many(basis.sharp_state(sites), mus)
    return np.array([expectation_p(basis, a) for a in states])


@dataclass
class GapReport:
    lattice: str
    s0: tuple[int, ...]
    mu: np.ndarray
    p_exact: np.ndarray  # (n_mu, n_sites)
    phi: np.ndarray
    rho: np.ndarray
    phi_half: np.ndarray
    g1: np.ndarray = field(init=False)
    g2: np.ndarray = field(init=False)
    g4: np.ndarray = field(init=False)

    def __post_init__(self):
        self.g1 = np.abs(self.p_exact - self.rho).max(axis=1)
        self.g2 = np.abs(self.p_exact - self.phi).max(axis=1)
        self.g4 = np.abs(self.p_exact - self.phi_half).max(axis=1)

    @property
    def running_max(self) -> dict[str, np.ndarray]:
        return {k: np.maximum.accumulate(getattr(self, k)) for k in ("g1", "g2", "g4")}

    def max_g4_from(self, mu_min: float = 4.0) -> float:
        sel = self.mu >= mu_min
        return float(self.g4[sel].max()) if sel.any() else 0.0

    def summary(self) -> dict:
        return {
            "lattice": self.lattice,
            "s0": list(self.s0),
            "max_g1": float(self.g1.max()),
            "max_g2": float(self.g2.max()),
            "max_g4": float(self.g4.max()),
            "max_g4_mu_ge_4": self.max_g4_from(4.0),
        }


def gap_sweep(lat: Lattice, s0, mu_grid, **backend_opts) -> GapReport:
    mus = np.asarray(mu_grid, dtype=float)
    if (mus < 0).any() or (np.diff(mus) < 0).any():
        raise ValueError("mu grid must be nonnegative and ascending")
    sites = tuple(sorted(getattr(s0, "up_set", s0)))
    hp = heat_propagator(lat)
    p = exact_expectations(lat, sites, mus, **backend_opts)
    phi = np.array([heat_solve(hp, sites, mu) for mu in mus])
    phi_half = np.array([heat_solve(hp, sites, mu / 2) for mu in mus])
    return GapReport(str(lat.spec), sites, mus, p, phi, rho_transform(phi), phi_half)


@dataclass
class RateFit:
    mu: np.ndarray  # strictly decreasing
    gap: np.ndarray
    ratios: np.ndarray
    used: np.ndarray  # mask of samples entering the fit
    slope: float | None
    intercept: float | None

    @property
    def identically_zero(self) -> bool:
        return self.slope is None

    def tail_ratios_decreasing(self, count: int = 4) -> bool:
        tail = self.ratios[-count:]
        return bool(np.all(np.diff(tail) < 0))

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "outcome": "identically zero at this precision" if self.identically_zero else "fit",
            "excluded_samples": int((~self.used).sum()),
        }


def small_mu_rate(lat: Lattice, s0, mu_min: float, mu_max: float, points: int,
                  **backend_opts) -> RateFit:
    """Log-log fit of g1 against mu on a geometric grid running from mu_max down to mu_min."""
    if not 0 < mu_min < mu_max:
        raise ValueError("need 0 < mu_min < mu_max")
    if points < 4:
        raise ValueError("need at least 4 points")
    mus = np.geomspace(mu_max, mu_min, points)
    report = gap_sweep(lat, s0, mus[::-1], **backend_opts)
    gap = report.g1[::-1]
    used = gap >= ZERO_GAP
    slope = intercept = None
    if used.sum() >= 2:
        slope, intercept = (float(c) for c in np.polyfit(np.log(mus[used]), np.log(gap[used]), 1))
    return RateFit(mus, gap, gap / mus, used, slope, intercept)


@dataclass
class LocalityReport:
    lattice: str
    site: int
    mu: float
    radii: list[int]
    influence: list[float]
    samples: list[int]
    exhaustive: list[bool]
    seed: int

    def rows(self):
        return zip(self.radii, self.influence, self.samples, self.exhaustive)

    def summary(self) -> dict:
        return {
            "lattice": self.lattice, "site": self.site, "mu": self.mu, "seed": self.seed,
            "influence": dict(zip(map(str, self.radii), self.influence)),
            "bound": "sampled lower bound",
        }


def _site_expectation(lat: Lattice, up: frozenset, site: int, mu: float) -> float:
    return float(exact_expectations(lat, tuple(up), [mu])[0, site])


def locality_probe(lat: Lattice, s0, site: int, mu: float, radii, samples: int = 64,
                   seed: int = 0) -> LocalityReport:
    """Largest observed change of <p_site>_mu when spins farther than L from ``site`` change.

    Exterior patterns are enumerated exactly when there are at most ``samples``
    of them; otherwise ``samples`` uniform random patterns plus the all-flip
    pattern are drawn. Patterns used at a larger radius are reused at every
    smaller one, since they also only touch the smaller radius's exterior.
    """
    radii = [int(r) for r in radii]
    if not radii:
        raise ValueError("radius list is empty")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not 0 <= site < lat.site_count:
        raise ValueError(f"site {site} outside lattice")
    base = frozenset(getattr(s0, "up_set", s0))
    p_base = _site_expectation(lat, base, site, mu)
    dist = lat.distances[site]
    cache: dict[frozenset, float] = {}
    carried: set[frozenset] = set()
    out: dict[int, tuple[float, int, bool]] = {}
    for idx, radius in sorted(enumerate(radii), key=lambda t: -t[1]):
        exterior = [int(j) for j in np.flatnonzero(dist > radius)]
        patterns: set[frozenset] = set()
        exhaustive = 2 ** len(exterior) <= samples
        if exterior:
            interior = base - set(exterior)
            if exhaustive:
                for bits in itertools.product((0, 1), repeat=len(exterior)):
                    patterns.add(interior | {j for j, b in zip(exterior, bits) if b})
            else:
                rng = np.random.default_rng([seed, idx])
                for _ in range(samples):
                    bits = rng.integers(0, 2, len(exterior))
                    patterns.add(interior | {j for j, b in zip(exterior, bits) if b})
                patterns.add(interior | {j for j in exterior if j not in base})
        patterns |= carried
        carried = patterns
        worst = 0.0
        for up in sorted(patterns, key=sorted):
            if up not in cache:
                cache[up] = _site_expectation(lat, up, site, mu)
            worst = max(worst, abs(cache[up] - p_base))
        out[idx] = (worst, len(patterns), exhaustive)
    return LocalityReport(
        str(lat.spec), site, float(mu), radii,
        [out[i][0] for i in range(len(radii))],
        [out[i][1] for i in range(len(radii))],
        [out[i][2] for i in range(len(radii))],
        seed,
    )


@dataclass(frozen=True)
class ProductState:
    """Site-wise spinors (phi(i), 1 - phi(i)) of the average-field product state."""

    up: np.ndarray
    down: np.ndarray

    @property
    def n_sites(self) -> int:
        return len(self.up)

    def norm_squared(self) -> float:
        return float(np.prod(self.up**2 + self.down**2))

    def full_vector(self) -> np.ndarray:
        """Amplitudes over all 2^n configurations; bit i of the index set means site i up."""
        n = self.n_sites
        if n > MAX_FULL_SPACE_SITES:
            raise ValueError(f"{n} sites exceed the full-space limit {MAX_FULL_SPACE_SITES}")
        return _product_vector(self.up, self.down)


def _product_vector(up: np.ndarray, down: np.ndarray) -> np.ndarray:
    vec = np.ones(1)
    for i in range(len(up)):
        # site i becomes the next-highest bit
        vec = np.concatenate([vec * down[i], vec * up[i]])
    return vec


def average_field_state(phi) -> ProductState:
    phi = np.array(phi, dtype=float)
    up, down = phi, 1.0 - phi
    up.setflags(write=False)
    down.setflags(write=False)
    return ProductState(up, down)


def product_expectation(ps: ProductState) -> np.ndarray:
    """Spin-up probability per site; the product factorizes so only site i's factor survives."""
    weight = ps.up**2 + ps.down**2
    if not np.all(weight > 0):
        # unreachable for real phi: phi^2 + (1 - phi)^2 >= 1/2
        raise ValueError("zero-norm product state")
    return ps.up**2 / weight


def full_space_hamiltonian_apply(lat: Lattice, psi: np.ndarray) -> np.ndarray:
    """H psi = sum over edges of (psi - I_ij psi) on the 2^n-dimensional space."""
    n = lat.site_count
    idx = np.arange(2**n, dtype=np.int64)
    out = np.zeros_like(psi)
    for i, j in lat.edges:
        differ = ((idx >> i) ^ (idx >> j)) & 1
        swapped = idx ^ (differ * ((1 << int(i)) | (1 << int(j))))
        out += psi - psi[swapped]
    return out


def average_field_residual(lat: Lattice, phi) -> float:
    """Relative defect of d(psi_AP)/d(mu) = -H psi_AP when phi follows the heat equation."""
    n = lat.site_count
    if n > MAX_FULL_SPACE_SITES:
        raise ValueError(f"{n} sites exceed the full-space limit {MAX_FULL_SPACE_SITES}")
    ps = average_field_state(phi)
    dphi = laplacian_apply(lat, ps.up)
    dpsi = average_field_derivative(ps.up, dphi)
    psi = ps.full_vector()
    h_psi = full_space_hamiltonian_apply(lat, psi)
    scale = max(np.linalg.norm(h_psi), np.linalg.norm(dpsi))
    # swapped products of equal factors can differ in the last bit
    if scale <= VANISHING * max(lat.n_edges, 1) * np.linalg.norm(psi):
        return 0.0
    return float(np.linalg.norm(dpsi + h_psi) / scale)


def average_field_derivative(phi: np.ndarray, dphi: np.ndarray) -> np.ndarray:
    """Product rule: sum over sites of the product with site i's factor differentiated."""
    phi = np.asarray(phi, dtype=float)
    down = 1.0 - phi
    total = np.zeros(2 ** len(phi))
    for i in range(len(phi)):
        up_i, down_i = phi.copy(), down.copy()
        up_i[i], down_i[i] = dphi[i], -dphi[i]
        total += _product_vector(up_i, down_i)
    return total


def _golden_max(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2


def bound_scan(step: float = 1e-3) -> tuple[float, float]:
    """Maximum over [0, 1] of |x - rho(x)| and its (lower) location."""
    if not 0 < step <= 1e-3:
        raise ValueError("step must lie in (0, 1e-3]")
    xs = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)

    def gap(x):
        return float(np.abs(x - rho_transform(x)))

    vals = np.abs(xs - rho_transform(xs))
    k = int(np.argmax(vals))
    x = _golden_max(gap, xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)])
    return gap(x), x


def q_invariant_gaps(lat: Lattice, s0, mu_grid, **backend_opts) -> float:
    """Largest difference between the gap sequences for S0 and its complement."""
    sites = set(getattr(s0, "up_set", s0))
    comp = [i for i in range(lat.site_count) if i not in sites]
    r1, r2 = gap_sweep(lat, sorted(sites), mu_grid, **backend_opts), gap_sweep(lat, comp, mu_grid, **backend_opts)
    return max(field_gap(getattr(r1, k), getattr(r2, k)) for k in ("g1", "g2", "g4"))


def as_config(lat: Lattice, s0) -> SpinConfig:
    return s0 if isinstance(s0, SpinConfig) else SpinConfig(lat, tuple(s0))

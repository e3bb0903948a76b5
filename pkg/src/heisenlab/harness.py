"""Experiment configuration, suite runners and result files."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .conjecture import gap_sweep, locality_probe, small_mu_rate
from .heatfield import field_gap, heat_propagator, heat_solve
from .lattice import Lattice, LatticeError, LatticeSpec, build_lattice
from .magnon import (
    DEFAULT_DENSE_CEILING,
    ResourceLimitError,
    SectorPropagator,
    SpinConfig,
    expectation_p,
    hamiltonian_apply,
    magnon_basis,
    project_field,
    project_sector,
    q_flip,
    sector_propagator,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3
SUITES = ("verify", "sweep", "rate", "locality")

TOL_PROJECTION_HEAT = 1e-10
TOL_Q = 1e-12
TOL_INTERTWINE = 1e-10
TOL_H1 = 1e-14
TOL_N1_ORACLE = 1e-12

# hard limits; reports also carry the observed values for comparison with 0.5 and 0.1
GAP_BOUND_1D = 0.52
G4_BOUND = 0.12
RATE_SLOPE_1D = 1.8

DEFAULT_VERIFY_FAMILY = (
    [f"chain:{n}:open" for n in range(2, 13)]
    + [f"chain:{n}:periodic" for n in range(3, 13)]
    + ["box2d:3x3:periodic", "box3d:2x2x2:periodic"]
)


class ConfigError(ValueError):
    pass


def parse_mu(text) -> list[float]:
    """``start:stop:step`` (inclusive), ``geom:min:max:points``, a comma list, or a number."""
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    s = str(text).strip()
    try:
        if s.startswith("geom:"):
            lo, hi, pts = s.split(":")[1:]
            return [float(x) for x in np.geomspace(float(lo), float(hi), int(pts))]
        if ":" in s:
            start, stop, step = (float(x) for x in s.split(":"))
            if step <= 0:
                raise ConfigError(f"mu step must be positive in {s!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + k * step for k in range(count)]
        return [float(x) for x in s.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse mu grid {s!r}: {exc}") from None


def parse_s0(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    s = str(value).strip()
    if s in ("block", "random"):
        return s
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"s0 must be block, random or a site list, got {s!r}") from None


@dataclass
class ExperimentConfig:
    suite: str = "sweep"
    lattice: LatticeSpec | None = None
    n_up: int | None = None
    s0: object = "block"  # "block" | "random" | list of sites
    count: int = 1
    seed: int = 0
    mu: list[float] = field(default_factory=lambda: parse_mu("0:10:0.25"))
    backend: str | None = None
    dense_ceiling: int = DEFAULT_DENSE_CEILING
    krylov_tol: float = 1e-10
    out: str = "results"
    site: int = 0
    radii: list[int] | None = None
    samples: int = 64
    perf: bool = False
    jobs: int = 1
    strict: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}")
        if self.suite != "verify" and self.lattice is None:
            raise ConfigError(f"suite {self.suite} needs a lattice")
        if not self.mu:
            raise ConfigError("mu grid is empty")
        if any(m < 0 for m in self.mu):
            raise ConfigError("mu values must be nonnegative")
        if self.backend not in (None, "dense", "krylov"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.count < 1 or self.samples < 1:
            raise ConfigError("count and samples must be >= 1")
        if self.lattice is not None:
            n_sites = math.prod(self.lattice.extents)
            if isinstance(self.s0, list):
                if len(set(self.s0)) != len(self.s0) or any(not 0 <= s < n_sites for s in self.s0):
                    raise ConfigError(f"invalid explicit s0 {self.s0}")
                if self.n_up is not None and self.n_up != len(self.s0):
                    raise ConfigError("n_up disagrees with the explicit s0 list")
            elif self.n_up is None:
                raise ConfigError("n_up is required for block or random s0")
            elif not 0 <= self.n_up <= n_sites:
                raise ConfigError(f"n_up={self.n_up} outside 0..{n_sites}")
            if not 0 <= self.site < n_sites:
                raise ConfigError(f"probe site {self.site} outside lattice")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lattice"] = str(self.lattice) if self.lattice else None
        return d

    @property
    def backend_opts(self) -> dict:
        return {"backend": self.backend, "dense_ceiling": self.dense_ceiling,
                "krylov_tol": self.krylov_tol}


_KEYS = {f for f in ExperimentConfig.__dataclass_fields__}


def load_config(path: str | None = None, **overrides) -> ExperimentConfig:
    """Read a JSON config file (optional) and apply non-None overrides on top."""
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(raw) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if isinstance(raw.get("lattice"), str):
            raw["lattice"] = LatticeSpec.parse(raw["lattice"])
        elif isinstance(raw.get("lattice"), dict):
            raw["lattice"] = LatticeSpec.from_dict(raw["lattice"])
    except (LatticeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    if "mu" in raw:
        raw["mu"] = parse_mu(raw["mu"])
    if "s0" in raw:
        raw["s0"] = parse_s0(raw["s0"])
    if isinstance(raw.get("radii"), str):
        raw["radii"] = [int(r) for r in raw["radii"].split(",")]
    try:
        return ExperimentConfig(**raw).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def sample_configs(lat: Lattice, n_up: int, count: int, seed: int) -> list[SpinConfig]:
    """Uniform random N-subsets; sample k draws from its own generator seeded by (seed, k)."""
    if not 0 <= n_up <= lat.site_count:
        raise ValueError(f"n_up={n_up} outside 0..{lat.site_count}")
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        out.append(SpinConfig(lat, tuple(rng.choice(lat.site_count, n_up, replace=False))))
    return out


def block_config(lat: Lattice, n_up: int, start: int = 0) -> SpinConfig:
    return SpinConfig(lat, tuple((start + k) % lat.site_count for k in range(n_up)))


def resolve_configs(cfg: ExperimentConfig, lat: Lattice) -> list[SpinConfig]:
    if isinstance(cfg.s0, list):
        return [SpinConfig(lat, tuple(cfg.s0))]
    if cfg.s0 == "block":
        return [block_config(lat, cfg.n_up)]
    return sample_configs(lat, cfg.n_up, cfg.count, cfg.seed)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _pmap(fn, items, jobs: int):
    # results come back in input order, so output files do not depend on scheduling
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class RunResult:
    status: int
    manifest: dict
    summary: dict = field(default_factory=dict)


def _finish(cfg: ExperimentConfig, out: Path, files: list[str], summary: dict,
            status: int, extra: dict | None = None) -> RunResult:
    _write_json(out / "summary.json", summary)
    files = files + ["summary.json"]
    manifest = {
        "config": cfg.to_dict(),
        "code_version": __version__,
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": files,
        "extrema": {k: v for k, v in summary.items() if k.startswith(("max", "min", "slope"))},
        "status": status,
    }
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)
    return RunResult(status, manifest, summary)


# ---------------------------------------------------------------- verify


@dataclass
class IdentityRow:
    lattice: str
    s0: str
    identity: str
    mu: float | str
    residual: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.residual <= self.tol)


def _verify_config(lat: Lattice, conf: SpinConfig, mus, opts, rng) -> list[IdentityRow]:
    rows = []
    tag = ",".join(map(str, conf.up_set))
    n, big = conf.n_up, lat.site_count
    hp = heat_propagator(lat)
    if n == 0:
        return rows
    basis = magnon_basis(lat, n)
    prop = sector_propagator(lat, n, **opts)
    a0 = basis.sharp_state(conf.up_set)
    comp = conf.complement()
    flipped_basis, flipped = q_flip(basis, a0)
    flipped_prop = sector_propagator(lat, big - n, **opts) if big > n else None
    for mu in mus:
        a = prop.evolve(a0, mu)
        res = field_gap(project_field(basis, a), heat_solve(hp, conf, mu))
        rows.append(IdentityRow(str(lat.spec), tag, "projection_heat", mu, res, TOL_PROJECTION_HEAT))
        p = expectation_p(basis, a)
        if flipped_prop is not None:
            pq = expectation_p(flipped_basis, flipped_prop.evolve(flipped, mu))
        else:
            pq = np.zeros(big)
        rows.append(IdentityRow(str(lat.spec), tag, "q_symmetry", mu, field_gap(pq, 1 - p), TOL_Q))
    # mu-independent structure on a random state of this sector
    x = rng.standard_normal(basis.dimension)
    qb, qx = q_flip(basis, x)
    _, qhx = q_flip(basis, hamiltonian_apply(basis, x))
    rows.append(IdentityRow(str(lat.spec), tag, "q_commutes_h", "",
                            field_gap(qhx, hamiltonian_apply(qb, qx)), TOL_Q))
    if n >= 2:
        hx = hamiltonian_apply(basis, x)
        worst = 0.0
        for m in range(1, n):
            lhs = project_sector(basis, hx, m)
            rhs = hamiltonian_apply(magnon_basis(lat, m), project_sector(basis, x, m))
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
        rows.append(IdentityRow(str(lat.spec), tag, "intertwining", "", worst, TOL_INTERTWINE))
    return rows


def _verify_lattice(lat: Lattice, mus, opts) -> list[IdentityRow]:
    rows = []
    b1 = magnon_basis(lat, 1)
    h1 = b1.hamiltonian.toarray()
    rows.append(IdentityRow(str(lat.spec), "", "h1_equals_minus_laplacian", "",
                            float(np.abs(h1 + lat.laplacian_matrix).max()), TOL_H1))
    # one magnon: amplitudes follow the heat equation, so <p_i> = phi_i^2 / sum phi^2
    prop = sector_propagator(lat, 1, **opts)
    hp = heat_propagator(lat)
    worst = 0.0
    for site in range(lat.site_count):
        for mu in mus:
            phi = heat_solve(hp, [site], mu)
            p = expectation_p(b1, prop.evolve(b1.sharp_state([site]), mu))
            worst = max(worst, field_gap(p, phi**2 / (phi**2).sum()))
    rows.append(IdentityRow(str(lat.spec), "", "one_magnon_oracle", "", worst, TOL_N1_ORACLE))
    return rows


def krylov_benchmark(n_sites: int = 16, mu: float = 1.0, tol: float = 1e-10) -> dict:
    """Time Krylov evolution of a block state on the periodic chain at half filling."""
    lat = build_lattice(LatticeSpec("chain", (n_sites,), "periodic"))
    basis = magnon_basis(lat, n_sites // 2)
    _ = basis.hamiltonian
    prop = SectorPropagator(basis, "krylov", krylov_tol=tol)
    a0 = basis.sharp_state(range(n_sites // 2))
    t0 = time.perf_counter()
    a = prop.evolve(a0, mu)
    seconds = time.perf_counter() - t0
    return {"lattice": str(lat.spec), "n_up": n_sites // 2, "dimension": basis.dimension,
            "mu": mu, "tol": tol, "seconds": seconds, "error_estimate": prop.last_error,
            "norm": float(np.linalg.norm(a))}


def run_verify(cfg: ExperimentConfig) -> RunResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = cfg.backend_opts
    if cfg.lattice is not None:
        lattices = [build_lattice(cfg.lattice)]
    else:
        lattices = [build_lattice(LatticeSpec.parse(t)) for t in DEFAULT_VERIFY_FAMILY]

    def work(item):
        k, lat = item
        rng = np.random.default_rng([cfg.seed, k])
        if cfg.lattice is not None:
            confs = resolve_configs(cfg, lat)
        else:
            confs = []
            for c in range(cfg.count if cfg.count > 1 else 3):
                n_up = int(rng.integers(1, lat.site_count))
                confs.append(sample_configs(lat, n_up, 1, cfg.seed * 7919 + 101 * k + c)[0])
        rows = []
        for conf in confs:
            rows += _verify_config(lat, conf, cfg.mu, opts, rng)
        if lat.site_count >= 2:
            rows += _verify_lattice(lat, cfg.mu, opts)
        return rows

    rows = [r for chunk in _pmap(work, list(enumerate(lattices)), cfg.jobs) for r in chunk]
    _write_csv(out / "verify.csv", ["lattice", "s0", "identity", "mu", "residual", "tol", "ok"],
               ([r.lattice, r.s0, r.identity, r.mu, r.residual, r.tol, r.ok] for r in rows))
    failures = [asdict(r) for r in rows if not r.ok]
    for f in failures:
        log.error("identity %s failed on %s s0=%s mu=%s residual=%.3g",
                  f["identity"], f["lattice"], f["s0"], f["mu"], f["residual"])
    worst: dict[str, float] = {}
    for r in rows:
        worst[r.identity] = max(worst.get(r.identity, 0.0), r.residual)
    summary = {"identities": len(rows), "failures": failures,
               "max_residual": dict(sorted(worst.items()))}
    extra = {}
    status = EXIT_FAILED if failures else EXIT_OK
    if cfg.perf:
        bench = krylov_benchmark()
        extra["performance"] = bench
        if bench["seconds"] >= 10.0:
            status = EXIT_FAILED
    return _finish(cfg, out, ["verify.csv"], summary, status, extra)


# ---------------------------------------------------------------- sweep


def run_sweep(cfg: ExperimentConfig) -> RunResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lat = build_lattice(cfg.lattice)
    confs = resolve_configs(cfg, lat)
    reports = _pmap(lambda c: gap_sweep(lat, c, cfg.mu, **cfg.backend_opts), confs, cfg.jobs)

    def rows():
        for k, rep in enumerate(reports):
            for m, mu in enumerate(rep.mu):
                for i in range(lat.site_count):
                    yield [k, mu, i, rep.p_exact[m, i], rep.phi[m, i], rep.rho[m, i],
                           rep.phi_half[m, i], rep.g1[m], rep.g2[m], rep.g4[m]]

    _write_csv(out / "sweep.csv",
               ["config", "mu", "site", "p_exact", "phi", "rho", "phi_half", "g1", "g2", "g4"],
               rows())
    summary = {
        "lattice": str(cfg.lattice),
        "configs": [list(c.up_set) for c in confs],
        "max_g1": max(float(r.g1.max()) for r in reports),
        "max_g2": max(float(r.g2.max()) for r in reports),
        "max_g4": max(float(r.g4.max()) for r in reports),
        "max_g4_mu_ge_4": max(r.max_g4_from(4.0) for r in reports),
    }
    checks = {"g4_mu_ge_4_below": G4_BOUND}
    passed = summary["max_g4_mu_ge_4"] < G4_BOUND
    if cfg.lattice.kind == "chain":
        checks["g1_g2_at_most"] = GAP_BOUND_1D
        passed &= max(summary["max_g1"], summary["max_g2"]) <= GAP_BOUND_1D
    summary["checks"] = checks
    summary["checks_passed"] = bool(passed)
    status = EXIT_FAILED if cfg.strict and not passed else EXIT_OK
    return _finish(cfg, out, ["sweep.csv"], summary, status)


# ---------------------------------------------------------------- rate


def run_rate(cfg: ExperimentConfig) -> RunResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lat = build_lattice(cfg.lattice)
    positive = sorted(m for m in cfg.mu if m > 0)
    if len(positive) < 4:
        raise ConfigError("rate needs at least 4 positive mu values (use geom:min:max:points)")
    confs = resolve_configs(cfg, lat)
    fits = _pmap(lambda c: small_mu_rate(lat, c, positive[0], positive[-1], len(positive),
                                         **cfg.backend_opts), confs, cfg.jobs)
    _write_csv(out / "rate.csv", ["config", "mu", "g1", "ratio", "used"],
               ([k, mu, g, r, u] for k, f in enumerate(fits)
                for mu, g, r, u in zip(f.mu, f.gap, f.ratios, f.used)))
    slopes = [f.slope for f in fits if f.slope is not None]
    summary = {
        "lattice": str(cfg.lattice),
        "configs": [list(c.up_set) for c in confs],
        "fits": [f.summary() for f in fits],
        "outcome": "fit" if slopes else "identically zero at this precision",
        "slope_min": min(slopes) if slopes else None,
        "max_g1": max(float(f.gap.max()) for f in fits),
        "tail_ratios_decreasing": all(f.tail_ratios_decreasing() for f in fits if f.slope is not None),
    }
    passed = summary["tail_ratios_decreasing"]
    if cfg.lattice.kind == "chain" and slopes:
        passed &= summary["slope_min"] >= RATE_SLOPE_1D
    summary["checks_passed"] = bool(passed)
    status = EXIT_FAILED if cfg.strict and not passed else EXIT_OK
    return _finish(cfg, out, ["rate.csv"], summary, status)


# ---------------------------------------------------------------- locality


def run_locality(cfg: ExperimentConfig) -> RunResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lat = build_lattice(cfg.lattice)
    radii = cfg.radii if cfg.radii else list(range(lat.eccentricity(cfg.site) + 1))
    confs = resolve_configs(cfg, lat)
    items = [(c, mu) for c in confs for mu in cfg.mu]
    reports = _pmap(lambda it: locality_probe(lat, it[0], cfg.site, it[1], radii,
                                              cfg.samples, cfg.seed), items, cfg.jobs)
    _write_csv(out / "locality.csv",
               ["config", "mu", "radius", "influence", "samples", "exhaustive"],
               ([k // len(cfg.mu), rep.mu, r, inf, n, ex] for k, rep in enumerate(reports)
                for r, inf, n, ex in rep.rows()))
    monotone = all(np.all(np.diff([rep.influence[radii.index(r)] for r in sorted(radii)]) <= 0)
                   for rep in reports)
    summary = {
        "lattice": str(cfg.lattice),
        "configs": [list(c.up_set) for c in confs],
        "site": cfg.site,
        "radii": radii,
        "max_influence": max(max(rep.influence) for rep in reports),
        "bound": "sampled lower bound",
        "non_increasing_in_radius": bool(monotone),
    }
    status = EXIT_FAILED if cfg.strict and not monotone else EXIT_OK
    return _finish(cfg, out, ["locality.csv"], summary, status)


RUNNERS = {"verify": run_verify, "sweep": run_sweep, "rate": run_rate, "locality": run_locality}


def run(cfg: ExperimentConfig) -> RunResult:
    return RUNNERS[cfg.suite](cfg)


def with_suite(cfg: ExperimentConfig, suite: str) -> ExperimentConfig:
    return replace(cfg, suite=suite).validate()


__all__ = [
    "ConfigError", "ExperimentConfig", "RunResult", "load_config", "parse_mu", "run",
    "run_locality", "run_rate", "run_sweep", "run_verify", "sample_configs",
    "ResourceLimitError", "EXIT_OK", "EXIT_FAILED", "EXIT_CONFIG", "EXIT_RESOURCE",
]

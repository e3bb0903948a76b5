"""Exit criteria for the package, one test per criterion.

Each test appends a PASS/FAIL line that ``conftest.py`` prints in the terminal summary.
"""
import json
import time

import numpy as np
import pytest
from scipy.sparse.linalg import expm_multiply

from heisenlab.conjecture import (
    average_field_residual,
    average_field_state,
    bound_scan,
    gap_sweep,
    locality_probe,
    product_expectation,
    small_mu_rate,
)
from heisenlab.harness import block_config, load_config, run_verify, sample_configs
from heisenlab.heatfield import heat_propagator, heat_solve, rho_transform
from heisenlab.lattice import parse_lattice
from heisenlab.magnon import (
    SectorPropagator,
    expectation_p,
    hamiltonian_apply,
    magnon_basis,
    project_field,
    project_sector,
    q_flip,
    sector_propagator,
)

from conftest import ACCEPTANCE_LINES
from oracles import full_space_hamiltonian, sector_block

SUITE = (
    [f"chain:{n}:{bc}" for n in range(6, 13) for bc in ("open", "periodic")]
    + ["box2d:3x3:periodic", "box3d:2x2x2:periodic"]
)
MUS = (0.1, 1.0, 5.0)


def record(number, name, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def suite_configs(lat, k, count=20):
    rng = np.random.default_rng([2026, k])
    return [sample_configs(lat, int(rng.integers(1, lat.site_count)), 1, 1000 * k + c)[0]
            for c in range(count)]


def conjecture_family():
    lat = parse_lattice("chain:10:periodic")
    confs = [block_config(lat, 5, start) for start in range(10)]
    rng = np.random.default_rng(505)
    for c in range(50):
        confs.append(sample_configs(lat, int(rng.integers(2, 9)), 1, 5000 + c)[0])
    return lat, confs


def test_01_projection_heat_theorem():
    t0 = time.perf_counter()
    worst = 0.0
    for k, text in enumerate(SUITE):
        lat = parse_lattice(text)
        hp = heat_propagator(lat)
        for conf in suite_configs(lat, k):
            b = magnon_basis(lat, conf.n_up)
            states = sector_propagator(lat, conf.n_up).evolve_many(b.sharp_state(conf.up_set), MUS)
            for mu, a in zip(MUS, states):
                worst = max(worst, np.abs(project_field(b, a) - heat_solve(hp, conf, mu)).max())
    elapsed = time.perf_counter() - t0
    record(1, "projection-heat theorem", worst <= 1e-9 and elapsed < 120,
           f"max residual {worst:.3e} (tol 1e-9), {elapsed:.1f}s (limit 120s)")


def test_02_intertwining():
    worst = 0.0
    for text in ("chain:8:open", "chain:8:periodic"):
        lat = parse_lattice(text)
        b = magnon_basis(lat, 4)
        rng = np.random.default_rng(8)
        for _ in range(10):
            x = rng.standard_normal(b.dimension)
            hx = hamiltonian_apply(b, x)
            for m in (1, 2, 3):
                rhs = hamiltonian_apply(magnon_basis(lat, m), project_sector(b, x, m))
                worst = max(worst, np.linalg.norm(project_sector(b, hx, m) - rhs))
    record(2, "intertwining P H_N = H_M P", worst <= 1e-10, f"max residual {worst:.3e} (tol 1e-10)")


def test_03_one_magnon_oracle():
    worst = 0.0
    for text in SUITE:
        lat = parse_lattice(text)
        hp = heat_propagator(lat)
        b = magnon_basis(lat, 1)
        prop = sector_propagator(lat, 1)
        for site in range(lat.site_count):
            states = prop.evolve_many(b.sharp_state([site]), MUS)
            for mu, a in zip(MUS, states):
                phi = heat_solve(hp, [site], mu)
                worst = max(worst, np.abs(expectation_p(b, a) - phi**2 / (phi**2).sum()).max())
    record(3, "one-magnon oracle", worst <= 1e-12, f"max residual {worst:.3e} (tol 1e-12)")


def test_04_q_symmetry():
    worst_p = worst_h = 0.0
    for k, text in enumerate(SUITE):
        lat = parse_lattice(text)
        rng = np.random.default_rng([404, k])
        for conf in suite_configs(lat, k, count=5):
            b = magnon_basis(lat, conf.n_up)
            qb, qa0 = q_flip(b, b.sharp_state(conf.up_set))
            p = sector_propagator(lat, conf.n_up).evolve_many(b.sharp_state(conf.up_set), MUS)
            pq = sector_propagator(lat, qb.n_up).evolve_many(qa0, MUS)
            for a, aq in zip(p, pq):
                worst_p = max(worst_p, np.abs(expectation_p(qb, aq) - (1 - expectation_p(b, a))).max())
            x = rng.standard_normal(b.dimension)
            _, qhx = q_flip(b, hamiltonian_apply(b, x))
            worst_h = max(worst_h, np.abs(qhx - hamiltonian_apply(qb, q_flip(b, x)[1])).max())
    record(4, "Q symmetry", worst_p <= 1e-12 and worst_h <= 1e-12,
           f"expectations {worst_p:.3e}, [Q,H] {worst_h:.3e} (tol 1e-12)")


@pytest.fixture(scope="module")
def family_reports():
    lat, confs = conjecture_family()
    mus = np.arange(0, 10.0001, 0.25)
    return [gap_sweep(lat, c, mus) for c in confs]


def test_05_conjectures_1_and_2(family_reports):
    g1 = max(r.g1.max() for r in family_reports)
    g2 = max(r.g2.max() for r in family_reports)
    record(5, "rho and phi gap bound", g1 <= 0.52 and g2 <= 0.52,
           f"max g1 {g1:.4f}, max g2 {g2:.4f} (hard 0.52; reference 0.5)")


def test_06_conjecture_4(family_reports):
    g4 = 0.0
    for r in family_reports:
        sel = np.isin(r.mu, np.arange(4.0, 11.0))
        assert sel.sum() == 7
        g4 = max(g4, r.g4[sel].max())
    record(6, "half-time heat field", g4 < 0.12,
           f"max g4 over mu in 4..10: {g4:.4f} (hard < 0.12; reference 0.1)")


def test_07_conjecture_3_rate():
    lat = parse_lattice("chain:12:periodic")
    fits = [small_mu_rate(lat, c, 1e-3, 1e-1, 8) for c in sample_configs(lat, 6, 5, seed=303)]
    slopes = [f.slope for f in fits]
    ok = all(s is not None and s >= 1.8 for s in slopes) and all(f.tail_ratios_decreasing(4) for f in fits)
    record(7, "small-mu rate", ok,
           f"slopes {', '.join(f'{s:.3f}' for s in slopes)} (need >= 1.8), tail g1/mu decreasing")


def test_08_phi_rho_bound():
    gap, x = bound_scan(1e-3)
    record(8, "|phi - rho| bound", 0.1500 < gap < 0.1503 and 0.2565 < x < 0.2576 and gap < 0.16,
           f"max {gap:.6f} at x = {x:.5f}")


def test_09_average_field_identities():
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(1000):
        phi = rng.uniform(0, 1, int(rng.integers(1, 30)))
        worst = max(worst, np.abs(product_expectation(average_field_state(phi)) - rho_transform(phi)).max())
    lat = parse_lattice("chain:6:periodic")
    flat = max(average_field_residual(lat, np.full(6, c)) for c in (0.0, 0.3, 0.5, 0.9))
    hp = heat_propagator(lat)
    r_small = average_field_residual(lat, heat_solve(hp, [0, 1, 2], 0.1))
    r_large = average_field_residual(lat, heat_solve(hp, [0, 1, 2], 10.0))
    record(9, "average-field identities", worst <= 1e-15 and flat <= 1e-12 and r_large < r_small,
           f"product vs rho {worst:.2e}, constant-field residual {flat:.2e}, "
           f"residual mu=10 {r_large:.3e} < mu=0.1 {r_small:.3e}")


def test_10_locality():
    lat = parse_lattice("chain:10:periodic")
    radii = list(range(0, 6))
    details, ok = [], True
    for s0, site in (([0, 1, 2, 3, 4], 2), ([0, 1, 2, 3, 4], 4), ([1, 4, 5, 8], 0)):
        rep = locality_probe(lat, s0, site, 1.0, radii, samples=64, seed=10)
        inf = dict(zip(rep.radii, rep.influence))
        ok &= bool(np.all(np.diff(rep.influence) <= 0))
        ok &= inf[4] < 0.5 * inf[1]
        ok &= inf[lat.eccentricity(site)] == 0.0
        details.append(f"L1 {inf[1]:.3e} L4 {inf[4]:.3e}")
    record(10, "locality", ok, "; ".join(details))


def test_11_brute_force_equivalence():
    worst = 0.0
    for text in ("chain:6:open", "chain:6:periodic"):
        lat = parse_lattice(text)
        H = full_space_hamiltonian([tuple(e) for e in lat.edges], 6)
        for n_up in range(7):
            diff = magnon_basis(lat, n_up).hamiltonian.toarray() - sector_block(H, 6, n_up)
            worst = max(worst, np.abs(diff).max())
    record(11, "sector H vs full-space swaps", worst <= 1e-14, f"max entry difference {worst:.1e}")


def test_12_krylov_performance(tmp_path):
    cfg = load_config(None, suite="verify", lattice="chain:4:periodic", n_up=2, mu="1",
                      perf=True, out=str(tmp_path))
    res = run_verify(cfg)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    bench = manifest["performance"]
    # independent accuracy check of the same evolution
    lat = parse_lattice("chain:16:periodic")
    b = magnon_basis(lat, 8)
    a0 = b.sharp_state(range(8))
    ours = SectorPropagator(b, "krylov", krylov_tol=1e-10).evolve(a0, 1.0)
    err = np.linalg.norm(ours - expm_multiply(-b.hamiltonian, a0))
    ok = res.status == 0 and bench["dimension"] == 12870 and bench["seconds"] < 10 and err <= 1e-9
    record(12, "Krylov performance", ok,
           f"dim {bench['dimension']} to mu=1 in {bench['seconds']:.3f}s (limit 10s), "
           f"error vs expm_multiply {err:.1e}")

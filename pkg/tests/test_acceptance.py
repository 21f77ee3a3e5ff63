"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Tolerances and runtime budgets are the stated ones; nothing is loosened to
make a criterion pass.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from lattice_coherence.admissibility import (
    NECESSARY_FAIL,
    find_critical_L,
    first_unstable,
    hurwitz_grid_check,
    necessary_conditions_consensus,
    necessary_conditions_vehicular,
)
from lattice_coherence.lattice import LocalArray, nearest_neighbour_array, standard_consensus_array, wavenumber_grid
from lattice_coherence.models import (
    consensus_dynamic,
    dapi_model,
    lookahead_model,
    standard_consensus_model,
    vehicular_dynamic,
)
from lattice_coherence.scaling import empirical_exponent, estimate_singularity_order, variance_sweep
from lattice_coherence.simulator import SimConfig, output_variance, simulate, string_embedding_compare
from lattice_coherence.spectral import (
    ORACLE_BUDGET,
    brute_force_variance,
    control_effort,
    exact_variance,
    integral_bounds,
    per_site_variance,
)

from model_factory import TEMPLATES, random_asymmetric_relative, random_model, random_symmetric

SWEEP_L = [32, 64, 128, 256, 512]
NN = lambda g, absolute=0.0: nearest_neighbour_array(1, g, absolute)


@pytest.fixture
def report(record_property, capsys):
    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        record_property("acceptance", line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return emit


def _slope(N, V):
    return stats.linregress(np.log(N), np.log(V)).slope


# -- 1. oracle equivalence -------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_oracle_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    Ls = range(4, 13)
    worst, cases = 0.0, 0
    for template in TEMPLATES:
        for d in (1, 2):
            models = []
            while len(models) < 20:
                m = random_model(template, d, rng)
                if all(first_unstable(m, wavenumber_grid(L, d), tol=-1e-9) is None for L in Ls):
                    models.append(m)
            for m in models:
                for L in Ls:
                    assert m.state_size * L**d <= ORACLE_BUDGET
                    r = per_site_variance(m, L, oracle=True, bounds=False)
                    worst = max(worst, abs(r.v_exact - r.v_oracle) / abs(r.v_oracle))
                    cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed <= 120
    report(1, ok, f"{cases} cases, max relative error {worst:.2e} (<= 1e-8), {elapsed:.1f} s (<= 120 s)")
    assert ok


# -- 2. closed form and integral sandwich ---------------------------------------------


def test_criterion_2a_cotangent_closed_form(report):
    t0 = time.perf_counter()
    m = standard_consensus_model(1, 1.0)
    errs = {L: abs(integral_bounds(m, L)[0] / (0.5 / math.tan(2 * math.pi / L)) - 1) for L in (8, 16, 64)}
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-6 and elapsed <= 60
    detail = ", ".join(f"L={L}: {e:.1e}" for L, e in errs.items())
    report("2a", ok, f"s_lower vs cot(2 pi/L)/2 relative errors {detail} (<= 1e-6), {elapsed:.1f} s")
    assert ok


def test_criterion_2b_integral_sandwich(report):
    t0 = time.perf_counter()
    m = standard_consensus_model(1, 1.0)
    rows = []
    for L in (64, 128, 256, 512, 1024):
        r = per_site_variance(m, L)
        rows.append((L, r.s_lower, r.v_exact, r.s_upper, r.within_bounds))
    elapsed = time.perf_counter() - t0
    ok = all(r[-1] for r in rows) and elapsed <= 60
    worst = max(rows, key=lambda r: r[1] / r[2])
    report(
        "2b",
        ok,
        f"s_lower <= v_exact <= s_upper holds for {sum(r[-1] for r in rows)}/{len(rows)} sizes; "
        f"at L={worst[0]} s_lower={worst[1]:.4g}, v_exact={worst[2]:.4g}, s_upper={worst[3]:.4g}; {elapsed:.1f} s",
    )
    assert ok


# -- 3. scaling exponents from exact sums ---------------------------------------------


def test_criterion_3_scaling_exponents(report):
    t0 = time.perf_counter()
    F = NN(1.0)
    cases = {
        "static consensus d=1": (standard_consensus_model(1), 1.0, 0.05),
        "vehicular relative static": (lookahead_model(1, 1, 1, 1), 3.0, 0.10),
        "vehicular relative dynamic": (vehicular_dynamic(F, LocalArray.zero(1), NN(0.5), F, F), 3.0, 0.10),
        "vehicular absolute static": (lookahead_model(1, 1, 0, 0, 1), 1.0, 0.05),
        "DAPI": (dapi_model(1, 1, 1, 1), 0.0, 0.05),
    }
    parts, ok = [], True
    for name, (m, target, tol) in cases.items():
        slope = empirical_exponent(variance_sweep(m, SWEEP_L)).slope
        good = abs(slope - target) <= tol
        ok &= good
        parts.append(f"{name} {slope:.3f} ({target:.2f}+-{tol:.2f})")
    reps = variance_sweep(standard_consensus_model(2), SWEEP_L)
    ratio = np.array([r.v_exact / math.log(r.N) for r in reps])
    spread = (ratio.max() - ratio.min()) / ratio.mean()
    ok &= spread <= 0.05
    parts.append(f"d=2 V_N/log N spread {spread:.1%} (<= 5%)")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 600
    report(3, ok, "; ".join(parts) + f"; {elapsed:.1f} s")
    assert ok


# -- 4. singularity orders -------------------------------------------------------------


def test_criterion_4_singularity_orders(report):
    cases = {
        "static consensus": (standard_consensus_model(1), 2.0),
        "vehicular relative": (lookahead_model(1, 1, 1, 1), 4.0),
        "vehicular absolute static": (lookahead_model(1, 1, 0, 0, 1), 2.0),
        "DAPI": (dapi_model(1, 1, 1, 1), 0.0),
    }
    parts, ok = [], True
    for name, (m, target) in cases.items():
        r = estimate_singularity_order(m).r
        ok &= abs(r - target) <= 0.05
        parts.append(f"{name} r={r:.3f} ({target:g}+-0.05)")
    report(4, ok, "; ".join(parts))
    assert ok


# -- 5. necessity of the admissibility conditions -------------------------------------


def test_criterion_5_admissibility_necessity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    g = lambda: rng.uniform(0.1, 2.0)
    counts = {}

    # consensus, violating both conditions: asymmetric B, relative A
    found = 0
    for _ in range(50):
        m = consensus_dynamic(NN(g()), random_asymmetric_relative(rng, 1), NN(g()))
        assert necessary_conditions_consensus(m).verdict == NECESSARY_FAIL
        v = find_critical_L(m, 4096, stop_at_first=True)
        found += v.L_crit is not None and v.L_crit <= 4096
    counts["consensus violators with finite L_crit"] = found

    # consensus satisfying the symmetric-B condition, negative symbols
    passed = 0
    for _ in range(50):
        m = consensus_dynamic(random_symmetric(rng, 1, absolute=rng.uniform(0, 1)), random_symmetric(rng, 1), random_symmetric(rng, 1))
        assert necessary_conditions_consensus(m).ok
        passed += hurwitz_grid_check(m).ok
    counts["consensus symmetric-B grid passes"] = passed

    # vehicular, B != 0 with relative A
    found = 0
    for _ in range(50):
        m = vehicular_dynamic(NN(g()), NN(g()), NN(g()), NN(g()), NN(g()))
        assert necessary_conditions_vehicular(m).verdict == NECESSARY_FAIL
        v = find_critical_L(m, 4096, stop_at_first=True)
        found += v.L_crit is not None and v.L_crit <= 4096
    counts["vehicular violators with finite L_crit"] = found

    # vehicular satisfying B = 0, A != 0, negative symbols
    passed = 0
    for _ in range(50):
        m = vehicular_dynamic(NN(g()), LocalArray.zero(1), NN(g()), NN(g()), NN(g()))
        assert necessary_conditions_vehicular(m).ok
        passed += hurwitz_grid_check(m).ok
    counts["vehicular B=0 grid passes"] = passed

    elapsed = time.perf_counter() - t0
    ok = all(c == 50 for c in counts.values()) and elapsed <= 300
    report(5, ok, "; ".join(f"{k} {v}/50" for k, v in counts.items()) + f"; {elapsed:.1f} s")
    assert ok


# -- 6. platoon Monte Carlo on the string ---------------------------------------------


@pytest.mark.slow
def test_criterion_6_platoon_string_slope(report):
    t0 = time.perf_counter()
    m = lookahead_model(1, 1, 1, 1)
    Ns = [20, 50, 100, 200]
    mc = []
    for N in Ns:
        cfg = SimConfig(N, topology="string", dt=0.1, t_end=2e4, trajectories=16, seed=N)
        mc.append(output_variance(simulate(m, cfg))[0])
    ring = [exact_variance(m, N) for N in Ns]
    s_mc, s_ring = _slope(Ns, mc), _slope(Ns, ring)
    elapsed = time.perf_counter() - t0
    ok = abs(s_mc - 3) <= 0.3 and abs(s_ring - 3) <= 0.05 and elapsed <= 1800
    report(
        6,
        ok,
        f"string Monte Carlo slope {s_mc:.3f} (3.0+-0.3), ring analytic slope {s_ring:.3f} (3.00+-0.05), "
        f"v_hat {', '.join(f'{v:.4g}' for v in mc)}; {elapsed:.1f} s",
    )
    assert ok


# -- 7. Monte Carlo against the exact variance ----------------------------------------


def test_criterion_7_monte_carlo_matches_analytic(report):
    t0 = time.perf_counter()
    m = standard_consensus_model(1)
    cfg = SimConfig(20, topology="ring", dt=0.01, t_end=2e4, warmup=200, trajectories=4, seed=7)
    v, se = output_variance(simulate(m, cfg))
    exact = brute_force_variance(m, 20)
    assert exact == pytest.approx(exact_variance(m, 20), rel=1e-8)
    rel = abs(v - exact) / exact
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.10 and elapsed <= 300
    report(7, ok, f"empirical {v:.4f}+-{se:.4f} vs analytic {exact:.5f}, relative gap {rel:.1%} (<= 10%); {elapsed:.1f} s")
    assert ok


# -- 8. control effort lower bounds ----------------------------------------------------


def test_criterion_8_effort_bounds(report):
    rng = np.random.default_rng(8)
    held, trials = 0, 0
    while trials < 100:
        radius = int(rng.integers(1, 3))
        m = consensus_dynamic(
            random_symmetric(rng, 1, radius, absolute=rng.uniform(0, 1)),
            random_symmetric(rng, 1, radius) if rng.random() < 0.8 else LocalArray.zero(1),
            random_symmetric(rng, 1, radius),
        )
        if first_unstable(m, wavenumber_grid(16, 1), tol=-1e-9) is not None:
            continue
        trials += 1
        e = control_effort(m, 16)
        held += e.satisfies_bounds
    hand = control_effort(consensus_dynamic(LocalArray.zero(1), LocalArray.zero(1), standard_consensus_array(1, 1.0)), 4)
    hand_ok = abs(hand.effort - 1.0) <= 1e-12 and abs(hand.bound_f - 1.0) <= 1e-12
    ok = held == 100 and hand_ok
    report(8, ok, f"both bounds hold for {held}/100 models; hand case effort {hand.effort:.15g} vs bound {hand.bound_f:g}")
    assert ok


# -- 9. string at least as incoherent as the ring --------------------------------------


@pytest.mark.slow
def test_criterion_9_embedding_inequality(report):
    cases = {"static consensus": standard_consensus_model(1), "vehicular relative": lookahead_model(1, 1, 1, 1)}
    parts, ok = [], True
    for name, m in cases.items():
        for L in (20, 50):
            cfg = SimConfig(L, dt=0.1, t_end=2e4, trajectories=4, seed=L)
            c = string_embedding_compare(m, L, cfg)
            ok &= c.string_at_least_ring
            parts.append(f"{name} L={L} string {c.v_string:.4g} vs ring {c.v_ring:.4g} (2SE {2 * c.combined_se:.2g})")
    report(9, ok, "; ".join(parts))
    assert ok

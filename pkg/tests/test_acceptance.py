"""Full-scale acceptance gate.

End-to-end guarantees on the shipped scenarios: exact transport in the
driftless limit, martingale behaviour of spot and call prices at 100,000
paths, positivity with the refinement-stable slack, two-route total-variance
consistency under time-step refinement, loading admissibility at 10,000
samples, coefficient agreement against a line-by-line scalar reference, and
byte-level determinism across worker counts.

Each test prints one ``[acceptance] <label>: PASS|FAIL`` line with the
measured quantity next to its pinned tolerance.  The module takes roughly
ten to fifteen minutes on a single core; all other test modules stay fast.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from fwdvol.admissibility import SampleSpec, validate_hypotheses
from fwdvol.curve import Curve, Grid
from fwdvol.dynamics import MarketState, compute_coefficients, simulate_path
from fwdvol.engine import convergence_study, run_ensemble, write_run
from fwdvol.errors import DegenerateRoot
from fwdvol.params import SimParams, VolVolSpec, build_model, load_scenario
from fwdvol.variance import feedback_residual, total_variance_from_curve

import oracles

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _load(name, **overrides):
    return load_scenario(SCENARIOS / name, **overrides)


def _check(label, ok, detail):
    print(f"[acceptance] {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{label}: {detail}"


@pytest.fixture(scope="module")
def flat_run():
    params = _load("flat.json")
    return params, run_ensemble(params, workers=1)


@pytest.fixture(scope="module")
def family1_run():
    params = _load("family1.json")
    return params, run_ensemble(params, workers=1)


@pytest.fixture(scope="module")
def family2_run():
    params = _load("family2.json")
    return params, run_ensemble(params, workers=1)


def test_transport_with_zero_volvol_is_exact():
    started = time.perf_counter()
    rng = np.random.default_rng(31415)
    n = 33
    x0 = 0.02 + 0.08 * rng.random(n)
    params = SimParams(
        n_nodes=n,
        n_paths=1,
        seed=2718,
        x0_values=tuple(x0),
        volvol=VolVolSpec(family="none", n_factors=1),
        snapshot_times=(0.25, 0.5, 0.75),
    )
    record = simulate_path(params, build_model(params.volvol))
    dx = params.dx
    worst_xi = 0.0
    series = total_variance_from_curve(record, T=params.horizon)
    for t in (0.0, 0.25, 0.5, 0.75):
        k = round(t / dx)
        expected = np.concatenate([x0[k:], np.full(k, x0[-1])])
        assert np.array_equal(record.curve_at(t).values, expected)
        xi_ref = oracles.trapezoid_between(x0.tolist(), dx, k, n - 1)
        step = round(t / params.dt)
        worst_xi = max(worst_xi, abs(series.values[step] - xi_ref))
    elapsed = time.perf_counter() - started
    _check(
        "transport oracle",
        worst_xi <= 1e-12 and elapsed < 1.0,
        f"max xi gap {worst_xi:.2e} <= 1e-12, elapsed {elapsed:.3f}s < 1s",
    )


def test_flat_scenario_spot_and_calls_are_martingales(flat_run):
    params, result = flat_run
    assert result.call_initial[0] == pytest.approx(
        oracles.BS_PRICES[(100.0, 0.2, 100.0, 1.0)], rel=1e-13
    )
    report = result.martingale_report()
    spot_times = sorted(t.t for t in report.tests if t.quantity == "spot")
    call_times = sorted(t.t for t in report.tests if t.quantity.startswith("call"))
    assert spot_times == [0.25, 0.5, 0.75, 1.0]
    assert call_times == [0.25, 0.5, 0.75]
    zmax = max(abs(t.z) for t in report.tests)
    _check(
        "flat martingale",
        report.passed,
        f"{len(report.tests)} checkpoints at {params.n_paths} paths, "
        f"max |z| = {zmax:.3f} <= 3",
    )


def test_stochastic_volvol_spot_and_calls_are_martingales(family1_run, family2_run):
    ok = True
    details = []
    for name, (params, result) in (("family1", family1_run), ("family2", family2_run)):
        report = result.martingale_report()
        zmax = max(abs(t.z) for t in report.tests)
        ok = ok and report.passed
        details.append(f"{name} max |z| = {zmax:.3f}")
    _check("stochastic-volvol martingale", ok, ", ".join(details) + " <= 3")


def test_short_end_feedback_identity():
    rng = np.random.default_rng(97)
    grid = Grid(17, 1.0)
    models = [
        build_model(VolVolSpec(family="family1")),
        build_model(VolVolSpec(family="family2")),
    ]
    worst = 0.0
    accepted = 0
    while accepted < 10_000:
        curve = Curve(grid, 0.04 * np.exp(rng.normal(0.0, 0.5, grid.n_nodes)))
        state = MarketState(t=0.3, spot=float(rng.uniform(60.0, 160.0)), curve=curve)
        try:
            residual = feedback_residual(
                models[accepted % 2], state.t, 100.0, state
            )
        except DegenerateRoot:
            continue
        worst = max(worst, abs(residual))
        accepted += 1
    _check(
        "feedback identity",
        worst < 1e-12,
        f"max |residual| = {worst:.2e} < 1e-12 on {accepted} states",
    )


def test_positivity_slack_and_floor_refinement(flat_run, family1_run, family2_run):
    ok = True
    details = []
    for name, (params, result) in (
        ("flat", flat_run), ("family1", family1_run), ("family2", family2_run)
    ):
        pos = result.positivity()
        assert pos["slack"] == pytest.approx(
            0.1 * max(params.x0_values) * np.sqrt(params.dt)
        )
        ok = ok and pos["pass"] and pos["spot_all_positive"] and pos["spot_min"] > 0
        ok = ok and pos["xi_below_slack"] == 0 and pos["curve_below_slack"] == 0
        details.append(f"{name} xi min {pos['xi_worst']:.2e}")

    fractions = []
    for dt in (1 / 256, 1 / 512, 1 / 1024):
        params = _load("family2.json", n_paths=10_000, dt=dt)
        summary = run_ensemble(params, workers=1).floor_summary()
        fractions.append(summary["path_fraction"])
    nonincreasing = all(b <= a for a, b in zip(fractions, fractions[1:]))
    ok = ok and nonincreasing and fractions[-1] == 0.0
    details.append(
        "floor fractions under dt halving: "
        + " >= ".join(f"{f:.4f}" for f in fractions)
    )
    _check("positivity and floor refinement", ok, "; ".join(details))


def test_total_variance_two_routes_converge():
    params = _load("convergence.json")
    report = convergence_study(params)
    shrinks = all(b < a for a, b in zip(report.xi_gap, report.xi_gap[1:]))
    _check(
        "total-variance cross-consistency",
        shrinks and report.xi_slope >= 0.4,
        f"sup-gap {report.xi_gap[0]:.2e} -> {report.xi_gap[-1]:.2e} over "
        f"dt {report.dts[0]:g}..{report.dts[-1]:g}, "
        f"slope {report.xi_slope:.2f} >= 0.4",
    )


def test_admissibility_validator_at_scale():
    spec = SampleSpec()
    ok = True
    for family in ("family1", "family2"):
        report = validate_hypotheses(build_model(VolVolSpec(family=family)), spec)
        ok = ok and report.passed
    adversarial = validate_hypotheses(
        build_model(VolVolSpec(family="adversarial")), spec
    )
    item = next(i for i in adversarial.items if i.name == "short_end_sign")
    witness = item.witness
    ok = (
        ok
        and not adversarial.passed
        and not item.passed
        and witness is not None
        and witness["discriminant"] < 0
    )
    _check(
        "admissibility validator",
        ok,
        f"families pass on {spec.n_samples} samples; adversarial witness "
        f"discriminant {witness['discriminant']:.3f} at "
        f"log-moneyness {witness['log_moneyness']:.3f}",
    )


def test_coefficients_match_term_by_term_reference():
    rng = np.random.default_rng(4242)
    grid = Grid(9, 1.0)
    models = [
        build_model(VolVolSpec(family="family1")),
        build_model(VolVolSpec(family="family2")),
    ]
    worst = 0.0
    for k in range(100):
        curve = Curve(grid, 0.05 * np.exp(rng.normal(0.0, 0.6, grid.n_nodes)))
        state = MarketState(t=0.25, spot=float(rng.uniform(70.0, 140.0)), curve=curve)
        model = models[k % 2]
        coeffs = compute_coefficients(model, state.t, 100.0, state)
        u = [c.values.tolist() for c in model.loadings(state.t, 100.0, state.spot, curve)]
        du = [
            c.values.tolist()
            for c in model.loadings_dx(state.t, 100.0, state.spot, curve)
        ]
        if all(v == 0.0 for row in du for v in row):
            du = None
        ref = oracles.coefficient_curves(
            curve.values.tolist(), u, du, float(np.log(100.0 / state.spot)), grid.dx
        )
        pairs = [(coeffs.drift.values, np.array(ref["F"]))]
        pairs += [
            (b.values, np.array(ref_b))
            for b, ref_b in zip(coeffs.diffusion, ref["B"])
        ]
        for got, expected in pairs:
            np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-18)
            scale = np.maximum(np.abs(expected), 1e-18)
            worst = max(worst, float(np.max(np.abs(got - expected) / scale)))
        assert coeffs.vol_shift == pytest.approx(ref["G"], rel=1e-12, abs=1e-18)
        assert coeffs.discriminant == pytest.approx(ref["L"], rel=1e-12)
    _check(
        "coefficient oracle",
        worst <= 1e-12,
        f"max relative gap {worst:.2e} <= 1e-12 on 100 states, 9 nodes",
    )


def test_identical_stats_bytes_across_worker_counts(tmp_path):
    params = _load("determinism.json")
    blobs = {}
    for workers in (1, 4, 8):
        out = tmp_path / f"workers{workers}"
        write_run(run_ensemble(params, workers=workers), out)
        blobs[workers] = (out / "stats.json").read_bytes()
    ok = blobs[1] == blobs[4] == blobs[8]
    _check(
        "worker determinism",
        ok,
        f"stats.json identical ({len(blobs[1])} bytes) for "
        f"{params.n_paths} paths across 1/4/8 workers",
    )

"""Ensemble orchestration: reproducible batches, statistics, artifacts.

Paths are numbered 0..n_paths-1 and path i always draws its noise from the
(seed, i) substream, so the ensemble is a pure function of the scenario.
Work is split into fixed-size chunks of consecutive paths; the chunk size
is a constant (never derived from the worker count), results land in
preallocated arrays indexed by path number, and every statistic is
computed once from the complete arrays — which together make the output
byte-identical whether the chunks ran inline or across a process pool.

Also here: the coupled-noise refinement study, where coarse-level Brownian
increments are exact sums of their fine-level children so that all dt
levels ride one Brownian path.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .curve import interp_values, prefix_integral_values, shift_values
from .dynamics import simulate_batch, simulate_path
from .errors import ScenarioError
from .params import SimParams, build_model
from .pricing import bs_price, martingale_test
from .rng import coarsen_increments, increments_matrix, path_increments
from .variance import (
    positivity_report,
    positivity_slack,
    simulate_total_variance,
    total_variance_from_curve,
)
from .volvol import VolVolModel

__all__ = [
    "CHUNK",
    "EnsembleResult",
    "run_ensemble",
    "write_run",
    "ConvergenceReport",
    "convergence_study",
]

# Paths per work unit.  Fixed so that chunk boundaries (and therefore every
# float generated inside a chunk) are independent of the worker count.
CHUNK = 4096

_TOL = 1e-9


def _resolve_model(params: SimParams, model: Optional[VolVolModel]) -> VolVolModel:
    return build_model(params.volvol) if model is None else model


def _run_chunk(params, model, start, size, s_steps, checkpoint_steps):
    """Simulate paths [start, start+size) and return their sample arrays."""
    noise = increments_matrix(
        params.seed, start, size, params.n_steps, model.n_factors, params.dt
    )
    out = simulate_batch(
        params, model, noise,
        checkpoint_steps=checkpoint_steps, maturities=params.maturities,
    )
    return (
        start,
        out.spot[:, s_steps].T.copy(),
        out.checkpoint_xi,
        out.min_node_value,
        out.floor_steps,
        out.first_floor_step,
        out.min_discriminant,
        out.blowup_step,
    )


@dataclass
class EnsembleResult:
    """Per-path samples and counters of one ensemble run.

    ``spot_samples`` rows follow ``spot_times`` (the configured checkpoints
    plus the terminal time); ``xi_samples``/``call_samples`` are indexed
    (checkpoint, maturity, path), with NaN where the checkpoint is at or
    past the maturity.  Call samples at a checkpoint are Black-Scholes
    prices at the implied vol reconstructed from that path's curve.
    """

    params: SimParams
    checkpoint_times: np.ndarray
    spot_times: np.ndarray
    maturities: np.ndarray
    spot_samples: np.ndarray
    xi_samples: np.ndarray
    call_samples: np.ndarray
    xi_initial: np.ndarray
    call_initial: np.ndarray
    min_node_value: np.ndarray
    floor_steps: np.ndarray
    first_floor_step: np.ndarray
    min_discriminant: np.ndarray
    blowup_step: np.ndarray
    negative_xi_clipped: int

    @property
    def n_paths(self) -> int:
        return self.spot_samples.shape[1]

    def excluded_paths(self) -> list:
        return [int(i) for i in np.nonzero(self.blowup_step >= 0)[0]]

    def positivity(self) -> dict:
        slack = positivity_slack(
            float(np.max(self.params.x0_curve().values)), self.params.dt
        )
        report = positivity_report(self.xi_samples, self.min_node_value, slack)
        alive = self.blowup_step < 0
        spot_min = float(np.min(self.spot_samples[:, alive])) if alive.any() else None
        report["spot_min"] = spot_min
        report["spot_all_positive"] = bool(spot_min > 0) if alive.any() else None
        report["pass"] = bool(report["pass"] and report["spot_all_positive"])
        return report

    def martingale_report(self):
        """Checkpoint z-tests: spot rows against s0, call rows against the
        time-zero Black-Scholes value from the initial curve."""
        entries = []
        for i, t in enumerate(self.spot_times):
            entries.append(("spot", t, self.spot_samples[i], self.params.s0))
        for j, T in enumerate(self.maturities):
            for i, t in enumerate(self.checkpoint_times):
                if t < T - _TOL:
                    entries.append((
                        f"call(T={T:g})", t, self.call_samples[i, j],
                        float(self.call_initial[j]),
                    ))
        return martingale_test(entries)

    def floor_summary(self) -> dict:
        hit = self.first_floor_step >= 0
        earliest = (
            float(np.min(self.first_floor_step[hit]) * self.params.dt)
            if hit.any() else None
        )
        return {
            "paths_hit": int(np.sum(hit)),
            "path_fraction": float(np.mean(hit)),
            "total_floor_steps": int(np.sum(self.floor_steps)),
            "min_discriminant": float(np.min(self.min_discriminant)),
            "first_hit_earliest_t": earliest,
        }

    def stats(self) -> dict:
        """The deterministic summary written to stats.json."""
        report = self.martingale_report()
        spot_tests = [t.to_json_dict() for t in report.tests if t.quantity == "spot"]
        calls = []
        xi_rows = []
        for j, T in enumerate(self.maturities):
            name = f"call(T={T:g})"
            calls.append({
                "maturity": float(T),
                "initial_total_variance": float(self.xi_initial[j]),
                "reference": float(self.call_initial[j]),
                "checkpoints": [
                    t.to_json_dict() for t in report.tests if t.quantity == name
                ],
            })
            rows = []
            for i, t in enumerate(self.checkpoint_times):
                samples = self.xi_samples[i, j]
                samples = samples[np.isfinite(samples)]
                if not samples.size:
                    continue
                rows.append({
                    "t": float(t),
                    "mean": float(np.mean(samples)),
                    "stderr": float(np.std(samples, ddof=1) / np.sqrt(samples.size)),
                })
            xi_rows.append({"maturity": float(T), "checkpoints": rows})
        return {
            "n_paths": self.n_paths,
            "n_steps": self.params.n_steps,
            "dt": self.params.dt,
            "seed": self.params.seed,
            "s0": self.params.s0,
            "strike": self.params.strike,
            "excluded_paths": self.excluded_paths(),
            "spot": {"reference": self.params.s0, "checkpoints": spot_tests},
            "calls": calls,
            "total_variance": xi_rows,
            "positivity": self.positivity(),
            "floor": self.floor_summary(),
            "negative_total_variance_clipped": self.negative_xi_clipped,
            "martingale_pass": report.passed,
            "martingale_note": report.note,
        }


def run_ensemble(
    params: SimParams,
    model: Optional[VolVolModel] = None,
    *,
    workers: int = 1,
) -> EnsembleResult:
    """Simulate the configured ensemble and collect per-path samples.

    ``workers`` > 1 distributes whole chunks over a process pool; it is a
    throughput knob only and never changes any output value.  Paths whose
    state turns non-finite are excluded from the sample arrays (NaN) and
    reported by index.
    """
    model = _resolve_model(params, model)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    checkpoint_steps = params.snapshot_steps()
    s_steps = list(checkpoint_steps)
    if params.n_steps not in s_steps:
        s_steps.append(params.n_steps)
    n_check, n_mat = len(checkpoint_steps), len(params.maturities)
    p = params.n_paths

    spot_samples = np.empty((len(s_steps), p))
    xi_samples = np.full((n_check, n_mat, p), np.nan)
    min_node = np.empty(p)
    floor_steps = np.empty(p, dtype=np.int64)
    first_floor = np.empty(p, dtype=np.int64)
    min_disc = np.empty(p)
    blowup = np.empty(p, dtype=np.int64)

    tasks = [
        (start, min(CHUNK, p - start)) for start in range(0, p, CHUNK)
    ]

    def _store(res):
        start, spot_rows, xi, mn, fs, ff, md, bs = res
        size = spot_rows.shape[1]
        sl = slice(start, start + size)
        spot_samples[:, sl] = spot_rows
        if xi is not None:
            xi_samples[:, :, sl] = xi
        min_node[sl] = mn
        floor_steps[sl] = fs
        first_floor[sl] = ff
        min_disc[sl] = md
        blowup[sl] = bs

    if workers == 1 or len(tasks) == 1:
        for start, size in tasks:
            _store(_run_chunk(params, model, start, size, s_steps, checkpoint_steps))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_chunk, params, model, start, size,
                            s_steps, checkpoint_steps)
                for start, size in tasks
            ]
            for fut in futures:
                _store(fut.result())

    # Dead paths keep NaN samples so every reduction skips them uniformly.
    dead = blowup >= 0
    if dead.any():
        spot_samples[:, dead] = np.nan
        xi_samples[:, :, dead] = np.nan

    grid = params.grid
    x0_prefix = prefix_integral_values(params.x0_curve().values, grid.dx)
    mats = np.asarray(params.maturities, dtype=np.float64)
    xi_initial = np.array([
        float(interp_values(x0_prefix, min(T, grid.horizon), grid)) for T in mats
    ])
    call_initial = np.array([
        bs_price(params.s0, np.sqrt(xi_initial[j] / T), params.strike, T)
        for j, T in enumerate(mats)
    ])

    check_times = np.asarray(checkpoint_steps, dtype=np.float64) * params.dt
    call_samples = np.full((n_check, n_mat, p), np.nan)
    clipped = 0
    for i, t in enumerate(check_times):
        spot_row = spot_samples[s_steps.index(checkpoint_steps[i])]
        for j, T in enumerate(mats):
            if not t < T - _TOL:
                continue
            xi = xi_samples[i, j]
            live = np.isfinite(xi)
            if not live.any():
                continue
            clipped += int(np.sum(xi[live] < 0))
            tau = T - t
            sigma = np.sqrt(np.maximum(xi[live], 0.0) / tau)
            call_samples[i, j, live] = bs_price(
                spot_row[live], sigma, params.strike, tau
            )

    return EnsembleResult(
        params=params,
        checkpoint_times=check_times,
        spot_times=np.asarray(s_steps, dtype=np.float64) * params.dt,
        maturities=mats,
        spot_samples=spot_samples,
        xi_samples=xi_samples,
        call_samples=call_samples,
        xi_initial=xi_initial,
        call_initial=call_initial,
        min_node_value=min_node,
        floor_steps=floor_steps,
        first_floor_step=first_floor,
        min_discriminant=min_disc,
        blowup_step=blowup,
        negative_xi_clipped=clipped,
    )


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_run(
    result: EnsembleResult,
    out_dir,
    *,
    model: Optional[VolVolModel] = None,
) -> dict:
    """Write the run artifacts: manifest.json, stats.json, paths/*.csv.

    The manifest pins the canonical scenario and its hash; the optional
    per-path CSV dumps re-simulate the first ``dump_paths`` paths from
    their substreams (bit-identical to the ensemble's) with snapshots at
    the checkpoint times.  Returns {name: path} of everything written.
    """
    params = result.params
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}

    manifest = {
        "package": "fwdvol",
        "version": __version__,
        "scenario": params.canonical_dict(),
        "scenario_hash": params.params_hash(),
    }
    _dump_json(manifest, out / "manifest.json")
    written["manifest"] = out / "manifest.json"

    _dump_json(result.stats(), out / "stats.json")
    written["stats"] = out / "stats.json"

    if params.dump_paths > 0:
        model = _resolve_model(params, model)
        pdir = out / "paths"
        pdir.mkdir(exist_ok=True)
        snaps = sorted({0, *params.snapshot_steps(), params.n_steps})
        for i in range(min(params.dump_paths, params.n_paths)):
            record = simulate_path(
                params, model, path_index=i, snapshot_steps=snaps
            )
            target = pdir / f"path-{i:05d}.csv"
            record.to_csv(target)
            written[f"path-{i:05d}"] = target
    return written


# ---------------------------------------------------------------------------
# Refinement study.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Coupled-noise refinement errors and their log-log slopes.

    ``xi_gap`` is the per-level mean over paths of the sup-over-time
    discrepancy between the directly integrated total variance and its
    curve reconstruction; ``spot_errors``/``curve_errors`` compare each
    coarse level's terminal state against the finest level on the same
    Brownian path.  Slopes are least-squares in log dt vs log error; a
    slope is None when the errors vanish identically (exact agreement).
    """

    dts: tuple
    n_paths: int
    maturity: float
    xi_gap: tuple
    xi_slope: Optional[float]
    spot_errors: tuple
    spot_slope: Optional[float]
    curve_errors: tuple
    curve_slope: Optional[float]

    def to_json_dict(self) -> dict:
        return {
            "dts": list(self.dts),
            "n_paths": self.n_paths,
            "maturity": self.maturity,
            "xi_gap": list(self.xi_gap),
            "xi_slope": self.xi_slope,
            "spot_errors": list(self.spot_errors),
            "spot_slope": self.spot_slope,
            "curve_errors": list(self.curve_errors),
            "curve_slope": self.curve_slope,
        }


def _fit_slope(dts, errors) -> Optional[float]:
    dts = np.asarray(dts, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    live = errors > 0
    if np.sum(live) < 2:
        return None
    return float(np.polyfit(np.log(dts[live]), np.log(errors[live]), 1)[0])


def convergence_study(
    params: SimParams,
    model: Optional[VolVolModel] = None,
    *,
    dts=None,
    n_paths: Optional[int] = None,
) -> ConvergenceReport:
    """Refine dt over coupled Brownian paths and measure empirical orders.

    Every level re-simulates the same paths with coarsened copies of one
    fine-level noise draw (coarse increments are exact sums of fine ones).
    Needs at least three dt levels, each an integer multiple of the finest
    and an integer divisor of the horizon.
    """
    model = _resolve_model(params, model)
    dts = tuple(sorted(params.convergence_dts if dts is None else dts, reverse=True))
    n_paths = params.convergence_paths if n_paths is None else int(n_paths)
    if len(dts) < 3:
        raise ScenarioError(f"need at least 3 dt levels, got {len(dts)}")
    if n_paths < 1:
        raise ScenarioError("need at least one path")
    dt_fine = dts[-1]
    steps_fine = params.horizon / dt_fine
    if abs(steps_fine - round(steps_fine)) > _TOL:
        raise ScenarioError(f"dt={dt_fine} does not divide the horizon")
    n_fine = int(round(steps_fine))
    ratios = []
    for dt in dts:
        r = dt / dt_fine
        if abs(r - round(r)) > _TOL:
            raise ScenarioError(
                f"dt={dt} is not an integer multiple of the finest dt={dt_fine}"
            )
        ratios.append(int(round(r)))

    T = float(params.maturities[0])
    level_params = [
        dataclasses.replace(params, dt=dt, n_steps=None, n_paths=n_paths)
        for dt in dts
    ]
    n_levels = len(dts)
    xi_gap = np.zeros(n_levels)
    s_err = np.zeros(n_levels)
    x_err = np.zeros(n_levels)

    for i in range(n_paths):
        fine = path_increments(params.seed, i, n_fine, model.n_factors, dt_fine)
        spots = np.empty(n_levels)
        curves = []
        for lv in range(n_levels):
            noise = coarsen_increments(fine, ratios[lv]) if ratios[lv] > 1 else fine
            record = simulate_path(level_params[lv], model, noise=noise, path_index=i)
            direct = simulate_total_variance(record, T)
            from_curve = total_variance_from_curve(record, T)
            m = min(direct.values.size, from_curve.values.size)
            xi_gap[lv] += np.max(np.abs(direct.values[:m] - from_curve.values[:m]))
            spots[lv] = record.spot[-1]
            curves.append(record.snapshot_values[-1])
        s_err += np.abs(spots - spots[-1])
        finest_curve = curves[-1]
        for lv in range(n_levels):
            x_err[lv] += np.max(np.abs(curves[lv] - finest_curve))

    xi_gap /= n_paths
    s_err /= n_paths
    x_err /= n_paths
    return ConvergenceReport(
        dts=dts,
        n_paths=n_paths,
        maturity=T,
        xi_gap=tuple(float(v) for v in xi_gap),
        xi_slope=_fit_slope(dts, xi_gap),
        spot_errors=tuple(float(v) for v in s_err[:-1]),
        spot_slope=_fit_slope(dts[:-1], s_err[:-1]),
        curve_errors=tuple(float(v) for v in x_err[:-1]),
        curve_slope=_fit_slope(dts[:-1], x_err[:-1]),
    )

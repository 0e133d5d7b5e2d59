"""Total implied variance along a path, two ways, plus its verifiers.

For a fixed maturity T the total implied variance is the prefix integral of
the curve evaluated at time-to-maturity, xi_t = I(X_t)[T - t].  It also
solves a scalar SDE in its own right; integrating that SDE directly off a
recorded path (same states, same Brownian increments) and comparing with
the curve reconstruction is the main cross-check that the curve dynamics
were assembled correctly: the two must agree to the discretization order.

Also here: the implied volatility read-off sqrt(xi / (T - t)), the
slice integral over a maturity window, the short-end feedback residual,
and the positivity report used by the acceptance checks (a discrete scheme
may undershoot zero by O(sqrt(dt)); the report counts samples below a
configured slack rather than below zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curve import interp_values, prefix_integral_values
from .dynamics import MarketState, PathRecord
from .errors import (
    DegenerateRoot,
    NegativeTotalVariance,
    NonPositiveTimeToMaturity,
)
from .volvol import VolVolModel, short_end_scalars

__all__ = [
    "TotalVarianceSeries",
    "total_variance_from_curve",
    "simulate_total_variance",
    "total_variance_slice",
    "implied_vol",
    "feedback_residual",
    "positivity_slack",
    "positivity_report",
]

_TOL = 1e-9


@dataclass(frozen=True)
class TotalVarianceSeries:
    """Samples (t, xi_t) of the total implied variance for one maturity."""

    maturity: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must align")

    def implied_vols(self) -> np.ndarray:
        """sqrt(xi / (T - t)) per sample; NaN where t has reached T."""
        tau = self.maturity - self.times
        out = np.full_like(self.values, np.nan)
        live = tau > _TOL
        out[live] = np.sqrt(np.maximum(self.values[live], 0.0) / tau[live])
        return out

    def to_csv(self, path) -> None:
        """Columns t, maturity, total_variance, implied_vol (blank at t = T)."""
        import csv as _csv

        vols = self.implied_vols()
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["t", "maturity", "total_variance", "implied_vol"])
            for t, v, s in zip(self.times, self.values, vols):
                w.writerow([
                    repr(float(t)), repr(float(self.maturity)), repr(float(v)),
                    "" if np.isnan(s) else repr(float(s)),
                ])


def _check_maturity(record: PathRecord, T: float) -> None:
    if not 0 < T <= record.grid.horizon + _TOL:
        raise ValueError(
            f"maturity {T} outside (0, {record.grid.horizon}]"
        )


def total_variance_from_curve(record: PathRecord, T: float) -> TotalVarianceSeries:
    """Reconstruct xi_t = I(X_t)[T - t] at every recorded snapshot with t <= T."""
    _check_maturity(record, T)
    grid = record.grid
    times = record.snapshot_times()
    keep = times <= T + _TOL
    times = times[keep]
    prefix = prefix_integral_values(record.snapshot_values[keep], grid.dx)
    values = np.array([
        interp_values(prefix[i], min(max(T - t, 0.0), grid.horizon), grid)
        for i, t in enumerate(times)
    ])
    return TotalVarianceSeries(maturity=T, times=times, values=values)


def total_variance_slice(record: PathRecord, T1: float, T2: float) -> TotalVarianceSeries:
    """The maturity-window variance: integral of X_t over [T1, T2 - t].

    Defined for t in [0, T2 - T1]; it starts at the window mass of the
    initial curve and hits exactly zero when the window closes.  All such
    slices staying nonnegative is equivalent to the curve itself staying
    nonnegative, which is how the positivity check uses them.
    """
    if not (0 <= T1 < T2 <= record.grid.horizon + _TOL):
        raise ValueError(f"need 0 <= T1 < T2 <= horizon, got ({T1}, {T2})")
    grid = record.grid
    times = record.snapshot_times()
    keep = times <= (T2 - T1) + _TOL
    times = times[keep]
    prefix = prefix_integral_values(record.snapshot_values[keep], grid.dx)
    lo = np.array([interp_values(prefix[i], T1, grid) for i in range(len(times))])
    hi = np.array([
        interp_values(prefix[i], min(max(T2 - t, T1), grid.horizon), grid)
        for i, t in enumerate(times)
    ])
    return TotalVarianceSeries(maturity=T2, times=times, values=hi - lo)


def _loading_at(ui: np.ndarray, x: float, grid) -> float:
    """A loading component of a single-path batch, evaluated at x."""
    if ui.shape[-1] == 1:
        return float(ui[0, 0])
    return float(interp_values(ui[0], x, grid))


def simulate_total_variance(record: PathRecord, T: float) -> TotalVarianceSeries:
    """Integrate the scalar total-variance SDE along a recorded path.

    Euler steps of

        d xi = xi ((1 + xi/4) |v|^2 - theta v_1) dt
               - (theta + v_1 lam)^2 dt - sum_{j>=2} (v_j lam)^2 dt
               + 2 xi sum_i v_i dW_i

    where v is the loading vector evaluated at time-to-maturity T - t on
    the recorded state, lam = ln(K / S_t), and theta is the recorded
    (floor-regularized) spot volatility, so both integrations see the exact
    same inputs.  Requires the record to hold a snapshot at every step up
    to T.
    """
    _check_maturity(record, T)
    params, model, grid = record.params, record.model, record.grid
    dt = params.dt
    n_last = int(np.floor(T / dt + _TOL))
    n_last = min(n_last, params.n_steps)
    need = np.arange(n_last + 1)
    if len(record.snapshot_steps) < n_last + 1 or not np.array_equal(
        record.snapshot_steps[: n_last + 1], need
    ):
        raise ValueError(
            "direct integration needs a curve snapshot at every step up to T"
        )

    xi = np.empty(n_last + 1)
    prefix0 = prefix_integral_values(record.snapshot_values[0], grid.dx)
    xi[0] = interp_values(prefix0, min(T, grid.horizon), grid)
    for k in range(n_last):
        t = k * dt
        spot = float(record.spot[k])
        lam = np.log(record.strike / spot)
        theta = float(record.spot_vols[k])
        u, _ = model.loadings_batch(
            t, record.strike, spot, record.snapshot_values[k][None, :], grid
        )
        x = min(max(T - t, 0.0), grid.horizon)
        v = [0.0] * model.n_factors if u is None else [
            _loading_at(ui, x, grid) for ui in u
        ]
        vsq = sum(vi * vi for vi in v)
        drift = (
            xi[k] * ((1.0 + 0.25 * xi[k]) * vsq - theta * v[0])
            - (theta + v[0] * lam) ** 2
            - sum(vj * vj for vj in v[1:]) * lam * lam
        )
        vdw = sum(vi * record.increments[k, i] for i, vi in enumerate(v))
        xi[k + 1] = xi[k] + drift * dt + 2.0 * xi[k] * vdw
    return TotalVarianceSeries(
        maturity=T, times=need * dt, values=xi
    )


def implied_vol(xi: float, t: float, T: float) -> float:
    """Implied volatility from total variance: sqrt(xi / (T - t))."""
    if not T > t:
        raise NonPositiveTimeToMaturity(f"need T > t, got T={T}, t={t}")
    if xi < 0:
        raise NegativeTotalVariance(f"total variance {xi} is negative")
    return float(np.sqrt(xi / (T - t)))


def feedback_residual(model: VolVolModel, t, strike, state: MarketState) -> float:
    """Short-end consistency gap: X[0] minus its feedback reconstruction.

    The spot volatility is defined exactly so that

        X[0] = (theta + u_1[0] lam)^2 + sum_{j>=2} (u_j[0] lam)^2

    whenever the discriminant is nonnegative; this evaluates the right side
    independently and returns the difference (zero up to roundoff).  Raises
    :class:`DegenerateRoot` on states where the square root degenerates.
    """
    curve = state.curve
    u, _ = model.loadings_batch(
        t, strike, state.spot, curve.values[None, :], curve.grid
    )
    heads = None if u is None else [float(ui[0, 0]) for ui in u]
    lam = float(np.log(strike / state.spot))
    x_head = float(curve.values[0])
    disc, g = short_end_scalars(heads, np.asarray(x_head), lam)
    if disc < 0:
        raise DegenerateRoot(
            f"negative spot-variance discriminant {float(disc):.3e}"
        )
    theta = float(np.sqrt(disc) - g)
    if heads is None:
        return x_head - theta * theta
    rebuilt = (theta + heads[0] * lam) ** 2 + sum(
        (hj * lam) ** 2 for hj in heads[1:]
    )
    return x_head - rebuilt


# ---------------------------------------------------------------------------
# Positivity accounting.
# ---------------------------------------------------------------------------


def positivity_slack(x0_sup: float, dt: float, coefficient: float = 0.1) -> float:
    """Allowed discretization undershoot below zero: c * sup(x0) * sqrt(dt).

    The exact solution stays nonnegative; an Euler scheme may cross zero by
    an amount that shrinks like sqrt(dt), so the positivity check uses this
    refinement-stable tolerance instead of exact zero.
    """
    if dt <= 0 or x0_sup <= 0 or coefficient <= 0:
        raise ValueError("slack inputs must be positive")
    return coefficient * x0_sup * float(np.sqrt(dt))


def positivity_report(xi_samples, curve_minima, slack: float) -> dict:
    """Count positivity violations beyond the discretization slack.

    ``xi_samples`` is any array of total-variance samples; ``curve_minima``
    per-path minima of the curve over all steps and nodes.  Non-finite
    entries (diverged paths, unreachable checkpoints) are ignored.  Returns
    a JSON-ready dict with counts and the worst witnesses.
    """
    xi = np.asarray(xi_samples, dtype=np.float64).ravel()
    xi = xi[np.isfinite(xi)]
    mins = np.asarray(curve_minima, dtype=np.float64).ravel()
    mins = mins[np.isfinite(mins)]
    xi_bad = int(np.sum(xi < -slack))
    curve_bad = int(np.sum(mins < -slack))
    return {
        "slack": float(slack),
        "xi_samples": int(xi.size),
        "xi_below_slack": xi_bad,
        "xi_worst": float(np.min(xi)) if xi.size else None,
        "curve_paths": int(mins.size),
        "curve_below_slack": curve_bad,
        "curve_worst": float(np.min(mins)) if mins.size else None,
        "pass": xi_bad == 0 and curve_bad == 0,
    }

"""Zero-rate Black-Scholes valuation and the Monte Carlo martingale check.

The model prices a single European call: the simulated curve gives a total
implied variance for the maturity, which plugs straight into the
Black-Scholes formula with zero interest rate.  Absence of arbitrage in
the continuous model makes both the stock and the resulting call price
martingales; the checks here are their finite-sample surrogates, z-scores
of checkpoint means against the known time-zero values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfc

from .dynamics import PathRecord
from .errors import InsufficientSample
from .variance import implied_vol, total_variance_from_curve

__all__ = [
    "OptionSpec",
    "norm_cdf",
    "bs_price",
    "PriceSeries",
    "option_price_process",
    "CheckpointTest",
    "MartingaleReport",
    "martingale_test",
]

_SQRT2 = float(np.sqrt(2.0))
Z_THRESHOLD = 3.0


def norm_cdf(x):
    """Standard normal CDF via the complementary error function.

    Accurate to full double precision in both tails (no 1 - Phi(-x)
    cancellation); accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * erfc(-x / _SQRT2)
    return float(out) if out.ndim == 0 else out


def bs_price(spot, sigma, strike, tau):
    """Zero-rate Black-Scholes call price, elementwise on array inputs.

    C = S Phi(d1) - K Phi(d2) with d_{1,2} = ln(S/K)/(sigma sqrt(tau))
    +- sigma sqrt(tau)/2; sigma = 0 returns the intrinsic value
    max(S - K, 0) (the almost-surely-deterministic limit).
    """
    spot = np.asarray(spot, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    strike = np.asarray(strike, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(spot <= 0) or np.any(strike <= 0):
        raise ValueError("spot and strike must be positive")
    if np.any(tau <= 0):
        raise ValueError("time to maturity must be positive")
    if np.any(sigma < 0):
        raise ValueError("volatility must be nonnegative")

    sig_rt = sigma * np.sqrt(tau)
    intrinsic = np.maximum(spot - strike, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d1 = np.log(spot / strike) / sig_rt + 0.5 * sig_rt
        d2 = d1 - sig_rt
        live = norm_cdf(d1) * spot - norm_cdf(d2) * strike
    out = np.where(sig_rt > 0, live, intrinsic)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OptionSpec:
    """European call contract: fixed strike and maturity."""

    strike: float
    maturity: float

    def __post_init__(self):
        if not self.strike > 0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if not self.maturity > 0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")


@dataclass(frozen=True)
class PriceSeries:
    """Samples (t, C_t) of the call value along one path."""

    spec: OptionSpec
    times: np.ndarray
    prices: np.ndarray
    spots: np.ndarray

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["t", "spot", "call_price"])
            for t, s, c in zip(self.times, self.spots, self.prices):
                w.writerow([repr(float(t)), repr(float(s)), repr(float(c))])


def option_price_process(record: PathRecord, spec: OptionSpec) -> PriceSeries:
    """The call value along a path: BS price at the reconstructed implied vol.

    Samples every recorded snapshot strictly before maturity; the value at a
    sample is bs_price(S_t, sqrt(xi_t/(T-t)), K, T-t) with xi_t read off the
    stored curve.
    """
    series = total_variance_from_curve(record, spec.maturity)
    live = series.times < spec.maturity - 1e-12
    times = series.times[live]
    xis = series.values[live]
    steps = record.snapshot_steps[: len(series.times)][live]
    spots = record.spot[steps]
    prices = np.array([
        bs_price(s, implied_vol(x, t, spec.maturity), spec.strike, spec.maturity - t)
        for t, x, s in zip(times, xis, spots)
    ])
    return PriceSeries(spec=spec, times=times, prices=prices, spots=spots)


# ---------------------------------------------------------------------------
# Martingale checkpoint tests.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckpointTest:
    """Mean-reversion-to-reference test of one quantity at one time."""

    quantity: str
    t: float
    reference: float
    mean: float
    stderr: float
    z: Optional[float]
    passed: bool
    n_samples: int

    def to_json_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "t": self.t,
            "reference": self.reference,
            "mean": self.mean,
            "stderr": self.stderr,
            "z": self.z,
            "pass": self.passed,
            "n_samples": self.n_samples,
        }


@dataclass(frozen=True)
class MartingaleReport:
    """All checkpoint tests of one ensemble, with the overall verdict.

    Each test uses a plain 3-standard-error band.  With many checkpoints
    the family-wise false-alarm rate grows accordingly (no multiplicity
    correction is applied); the note field restates this.
    """

    tests: tuple
    threshold: float = Z_THRESHOLD

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests)

    @property
    def note(self) -> str:
        k = len(self.tests)
        return (
            f"{k} checkpoint tests at |z| <= {self.threshold:g} each, "
            "no multiplicity correction; expected false-alarm rate about "
            f"{k * 0.0027:.3f} under the null."
        )

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "note": self.note,
            "pass": self.passed,
            "tests": [t.to_json_dict() for t in self.tests],
        }

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["quantity", "t", "reference", "mean", "stderr", "z", "pass"])
            for t in self.tests:
                w.writerow([
                    t.quantity, repr(float(t.t)), repr(float(t.reference)),
                    repr(float(t.mean)), repr(float(t.stderr)),
                    "" if t.z is None else repr(float(t.z)), t.passed,
                ])


def _checkpoint_test(quantity, t, samples, reference, threshold) -> CheckpointTest:
    samples = np.asarray(samples, dtype=np.float64)
    samples = samples[np.isfinite(samples)]
    n = samples.size
    if n < 100:
        raise InsufficientSample(
            f"{quantity} at t={t}: {n} usable samples, need at least 100"
        )
    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / np.sqrt(n))
    if stderr == 0.0:
        # Degenerate sample: pass only on exact agreement.
        z = 0.0 if mean == reference else None
        passed = z is not None
    else:
        z = (mean - reference) / stderr
        passed = abs(z) <= threshold
    return CheckpointTest(
        quantity=quantity, t=float(t), reference=float(reference), mean=mean,
        stderr=stderr, z=z, passed=passed, n_samples=n,
    )


def martingale_test(entries, *, threshold: float = Z_THRESHOLD) -> MartingaleReport:
    """z-test checkpoint means against their time-zero references.

    ``entries`` is an iterable of (quantity, t, samples, reference) tuples:
    per-path samples of one quantity at one checkpoint and the value its
    mean must revert to.  Non-finite samples (diverged paths) are dropped;
    at least 100 usable paths are required per entry.  The report fails if
    any |z| exceeds the threshold.
    """
    tests = tuple(
        _checkpoint_test(quantity, t, samples, reference, threshold)
        for quantity, t, samples, reference in entries
    )
    return MartingaleReport(tests=tests, threshold=threshold)

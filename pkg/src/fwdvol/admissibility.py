"""Numerical admissibility checks for vol-of-vol models.

The well-posedness of the curve dynamics rests on structural conditions on
the loading map: growth control against the state, smoothness of the
x-derivative, local Lipschitz continuity in (S, X) (also for the products
with the spot volatility), a derivative bound that tames the drift, and
the sign condition that keeps the spot-variance discriminant nonnegative
whenever the curve's short end is.  None of these can be proved
numerically — what this module does is hammer a model with random states
and report the empirical extremes, failing an item only on a concrete
counterexample (non-finite growth, or a negative discriminant with the
offending state attached).

The shipped families are designed to pass; the deliberately inadmissible
``AdversarialVolVol`` exists to prove the sign check can fail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curve import Grid, h1_norm_values, prefix_integral_values
from .volvol import VolVolModel, short_end_scalars

__all__ = [
    "SampleSpec",
    "ItemResult",
    "ValidationReport",
    "validate_hypotheses",
]


@dataclass(frozen=True)
class SampleSpec:
    """How to sample random market states for the validator.

    Curves are positive wiggly perturbations of a flat level; spots are
    log-uniform around the strike so the log-moneyness sweeps both signs.
    """

    n_samples: int = 10_000
    seed: int = 20_240
    n_nodes: int = 65
    horizon: float = 1.0
    strike: float = 100.0
    spot_low: float = 50.0
    spot_high: float = 200.0
    level_low: float = 0.005
    level_high: float = 0.3
    wiggle: float = 0.5
    pair_scale: float = 1e-3

    def __post_init__(self):
        if self.n_samples < 10:
            raise ValueError("need at least 10 samples")
        if not 0 < self.spot_low < self.spot_high:
            raise ValueError("invalid spot range")
        if not 0 < self.level_low < self.level_high:
            raise ValueError("invalid curve level range")
        if not 0 <= self.wiggle < 1:
            raise ValueError("wiggle must be in [0, 1) to keep curves positive")
        if not 0 < self.pair_scale <= 0.01:
            raise ValueError("pair_scale must be a small positive relative step")

    @property
    def grid(self) -> Grid:
        return Grid(n_nodes=self.n_nodes, horizon=self.horizon)


@dataclass(frozen=True)
class ItemResult:
    """Outcome of one admissibility item."""

    name: str
    passed: bool
    extremum: Optional[float]
    detail: str
    witness: Optional[dict] = None

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": self.passed,
            "extremum": self.extremum,
            "detail": self.detail,
            "witness": self.witness,
        }


@dataclass(frozen=True)
class ValidationReport:
    """All admissibility items for one model over one sample cloud."""

    model: str
    n_samples: int
    seed: int
    items: tuple

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    def failed_items(self) -> list:
        return [item for item in self.items if not item.passed]

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "pass": self.passed,
            "items": [item.to_json_dict() for item in self.items],
        }


def _sample_states(spec: SampleSpec, rng: np.random.Generator):
    """Random positive curves and spots: (values (p, n), spots (p,))."""
    p, grid = spec.n_samples, spec.grid
    x = grid.nodes()[None, :]
    level = rng.uniform(spec.level_low, spec.level_high, (p, 1))
    amp = rng.uniform(0.0, spec.wiggle, (p, 1))
    freq = rng.integers(1, 5, (p, 1)).astype(np.float64)
    phase = rng.uniform(0.0, 1.0, (p, 1))
    values = level * (
        1.0 + amp * np.sin(2.0 * np.pi * (freq * x / grid.horizon + phase))
    )
    spots = np.exp(rng.uniform(np.log(spec.spot_low), np.log(spec.spot_high), p))
    return values, spots


def _as_rows(parts, p, n):
    """Loading components broadcast to dense (p, n) rows; zeros if absent."""
    if parts is None:
        return None
    return [np.broadcast_to(ui, (p, n)) for ui in parts]


def _eval(model, spec, spots, values):
    """Loadings, derivative loadings, discriminant and spot vol of a batch."""
    grid = spec.grid
    u, du = model.loadings_batch(0.0, spec.strike, spots, values, grid)
    p, n = values.shape
    lam = np.log(spec.strike / spots)
    heads = None if u is None else [np.broadcast_to(ui[..., 0], (p,)) for ui in u]
    disc, shift = short_end_scalars(heads, values[:, 0], lam)
    disc = np.broadcast_to(disc, (p,))
    theta_bar = np.sqrt(np.abs(disc)) - shift
    return {
        "u": _as_rows(u, p, n),
        "du": _as_rows(du, p, n),
        "lam": lam,
        "disc": disc,
        "theta_bar": np.broadcast_to(theta_bar, (p,)),
    }


def _finite_item(name, extremum, detail, witness=None) -> ItemResult:
    ok = bool(np.isfinite(extremum))
    return ItemResult(
        name=name, passed=ok, extremum=float(extremum) if ok else None,
        detail=detail, witness=witness,
    )


def validate_hypotheses(model: VolVolModel, spec: SampleSpec) -> ValidationReport:
    """Run every admissibility item on a cloud of random states.

    Returns a report whose items carry the empirical extrema (the observed
    constants in the growth/Lipschitz bounds) and, for the sign condition,
    the worst witness state if it is violated.
    """
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid
    values, spots = _sample_states(spec, rng)
    p, n = values.shape
    base = _eval(model, spec, spots, values)
    prefix = prefix_integral_values(values, grid.dx)
    log_spot = np.log(spots)
    items = []

    # Growth: |u_i[x]| (1 + |ln S| + |I(X)[x]| + |theta_bar|) stays bounded.
    weight = 1.0 + np.abs(log_spot)[:, None] + np.abs(prefix) \
        + np.abs(base["theta_bar"])[:, None]
    if base["u"] is None:
        growth = 0.0
    else:
        growth = max(float(np.max(np.abs(ui) * weight)) for ui in base["u"])
    items.append(_finite_item(
        "loading_growth_bounded", growth,
        "sup over samples and nodes of |u_i| * (1 + |ln S| + |I(X)| + |vol|)",
    ))

    # Smoothness: the x-derivative loadings have finite H1 norm.
    if base["du"] is None:
        h1_max = 0.0
    else:
        h1_max = max(
            float(np.max(h1_norm_values(dui, grid.dx))) for dui in base["du"]
        )
    items.append(_finite_item(
        "derivative_loading_in_h1", h1_max,
        "largest discrete H1 norm of any x-derivative loading",
    ))

    # Local Lipschitz in (S, X), including the vol-weighted products.
    ds = rng.uniform(-1.0, 1.0, p) * spec.pair_scale
    dv = rng.uniform(-1.0, 1.0, p) * spec.pair_scale
    spots2 = spots * (1.0 + ds)
    values2 = values * (1.0 + dv)[:, None]
    other = _eval(model, spec, spots2, values2)
    dist = np.abs(spots2 - spots) + h1_norm_values(values2 - values, grid.dx)
    dist = np.maximum(dist, 1e-300)

    def _pair_ratio(a, b):
        if a is None and b is None:
            return 0.0
        za = np.zeros((p, n))
        diffs = [
            np.abs((za if ai is None else ai) - (za if bi is None else bi))
            for ai, bi in zip(a or [za] * model.n_factors,
                              b or [za] * model.n_factors)
        ]
        return max(float(np.max(np.max(d, axis=-1) / dist)) for d in diffs)

    lip = max(
        _pair_ratio(base["u"], other["u"]),
        _pair_ratio(base["du"], other["du"]),
    )
    tb1, tb2 = base["theta_bar"], other["theta_bar"]
    u1a = np.zeros((p, n)) if base["u"] is None else base["u"][0]
    u1b = np.zeros((p, n)) if other["u"] is None else other["u"][0]
    du1a = np.zeros((p, n)) if base["du"] is None else base["du"][0]
    du1b = np.zeros((p, n)) if other["du"] is None else other["du"][0]
    lip = max(
        lip,
        float(np.max(np.max(np.abs(u1a * tb1[:, None] - u1b * tb2[:, None]), -1) / dist)),
        float(np.max(np.max(np.abs(du1a * tb1[:, None] - du1b * tb2[:, None]), -1) / dist)),
    )
    items.append(_finite_item(
        "locally_lipschitz", lip,
        "largest difference ratio over perturbed state pairs, for the "
        "loadings, their x-derivatives and the vol-weighted first components",
    ))

    # Drift taming: |du_1| <= C / (1 + |vol|) and |du_1 * vol * ln S|
    # growing at most linearly in the state's H1 norm.
    state_h1 = h1_norm_values(values, grid.dx)
    bound_a = float(np.max(np.abs(du1a) * (1.0 + np.abs(tb1))[:, None]))
    bound_b = float(np.max(
        np.max(np.abs(du1a * (tb1 * log_spot)[:, None]), axis=-1)
        / (1.0 + state_h1)
    ))
    items.append(_finite_item(
        "derivative_vol_bound", max(bound_a, bound_b),
        "sup of |du_1| (1 + |vol|) and of |du_1 * vol * ln S| / (1 + |X|_H1)",
    ))

    # Sign condition: the discriminant is nonnegative on positive curves,
    # and collapses to zero together with the curve's short end.
    disc = base["disc"]
    worst = int(np.argmin(disc))
    sign_ok = bool(disc[worst] >= -1e-12)
    witness = None
    if not sign_ok:
        witness = {
            "spot": float(spots[worst]),
            "strike": float(spec.strike),
            "log_moneyness": float(base["lam"][worst]),
            "curve_head": float(values[worst, 0]),
            "discriminant": float(disc[worst]),
        }
    zero_head = values[: min(p, 256)].copy()
    zero_head[:, 0] = 0.0
    zh = _eval(model, spec, spots[: zero_head.shape[0]], zero_head)
    zero_gap = float(np.max(np.abs(zh["disc"])))
    degenerate_ok = zero_gap <= 1e-12
    items.append(ItemResult(
        name="short_end_sign",
        passed=sign_ok and degenerate_ok,
        extremum=float(disc[worst]),
        detail=(
            "minimum spot-variance discriminant over positive-curve samples "
            f"(zero-short-end residual {zero_gap:.2e})"
        ),
        witness=witness,
    ))

    return ValidationReport(
        model=type(model).__name__,
        n_samples=spec.n_samples,
        seed=spec.seed,
        items=tuple(items),
    )

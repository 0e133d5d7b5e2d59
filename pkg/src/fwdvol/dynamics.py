"""Coefficients of the curve/stock system and the regularized mild stepper.

The state is the pair (X, S): the forward-variance-density curve and the
stock price.  One time step of the scheme does, in order:

1. evaluate the drift curve F and the diffusion curves B from the current
   state (both vanish identically when the vol-of-vol is zero),
2. perturb: X + F*dt + sum_i B_i * dW_i,
3. transport the perturbed curve by dt with the right-end clamp (the mild
   / exponential-Euler ordering: perturb, then shift), and
4. advance ln S by the spot volatility sqrt(|L| v eps) - G, where L is the
   short-end discriminant and eps > 0 the regularization floor, so S stays
   strictly positive by construction.

Every path-level routine here is a thin wrapper over a vectorized batch
kernel operating on (n_paths, n_nodes) arrays; a single path is a batch of
one, which is what makes per-path results independent of how paths are
grouped into batches or processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curve import (
    Curve,
    Grid,
    interp_values,
    prefix_integral_values,
    shift_values,
)
from .errors import NumericalBlowup, ScenarioError
from .params import SimParams
from .volvol import VolVolModel, short_end_scalars

__all__ = [
    "Coefficients",
    "MarketState",
    "StepInfo",
    "StoppingDiagnostics",
    "PathRecord",
    "compute_coefficients",
    "step",
    "simulate_path",
    "simulate_batch",
    "BatchResult",
]


@dataclass(frozen=True)
class MarketState:
    """Market snapshot: calendar time, stock price, forward-variance curve."""

    t: float
    spot: float
    curve: Curve

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError(f"spot must be positive, got {self.spot}")


@dataclass(frozen=True)
class Coefficients:
    """Drift and diffusion curves plus the short-end scalars of one state.

    ``vol_shift`` is the log-moneyness-weighted first loading (the amount
    subtracted from the square root in the spot volatility);
    ``discriminant`` is the quantity under that square root.
    """

    drift: Curve
    diffusion: tuple
    vol_shift: float
    discriminant: float


@dataclass(frozen=True)
class StepInfo:
    """What one step used: the discriminant it saw and the spot volatility
    actually applied (after the floor), plus whether the floor engaged."""

    discriminant: float
    spot_vol: float
    floor_hit: bool


@dataclass
class StoppingDiagnostics:
    """Floor-crossing bookkeeping along one path."""

    first_floor_hit: Optional[float] = None
    floor_steps: int = 0
    min_discriminant: float = np.inf


# ---------------------------------------------------------------------------
# Coefficient assembly (batch arrays; last axis = nodes).
# ---------------------------------------------------------------------------


def _coefficient_parts(model, t, strike, spot, values, grid, prefix=None):
    """Shared sub-expressions of the drift/diffusion formulas.

    Returns a dict with the loadings ``u``/``du`` (possibly None), the
    prefix integral ``J``, log-moneyness ``lam``, the short-end scalars
    ``disc``/``shift_g`` and the |.|-regularized spot volatility
    ``theta_bar``, all shaped per-path.  The prefix integral is only
    computed when some term actually consumes it.
    """
    J = prefix
    if J is None and model.uses_prefix:
        J = prefix_integral_values(values, grid.dx)
    u, du = model.loadings_batch(t, strike, spot, values, grid, prefix=J)
    if J is None and u is not None:
        J = prefix_integral_values(values, grid.dx)
    lam = np.log(strike / np.asarray(spot, dtype=np.float64))
    heads = None if u is None else [ui[..., 0] for ui in u]
    disc, shift_g = short_end_scalars(heads, values[..., 0], lam)
    theta_bar = np.sqrt(np.abs(disc)) - shift_g
    return {
        "J": J, "u": u, "du": du, "lam": lam,
        "disc": disc, "shift_g": shift_g, "theta_bar": theta_bar,
    }


def _drift_values(values, parts):
    """The drift curve F, nodewise, from precomputed parts (None if zero).

    F = J*( X*|u|^2/2 + <u,du>*J/2 + 2<u,du> - tb*du1 )
        + X*( |u|^2 - tb*u1 )
        - 2*( tb*du1*lam + <u,du>*lam^2 )

    with J the prefix integral, tb the regularized spot vol, lam the
    log-moneyness, u1/du1 the first components, <.,.> the sum over drivers.
    """
    u, du = parts["u"], parts["du"]
    if u is None:
        return None
    J = parts["J"]
    tb = parts["theta_bar"][..., None]
    lam = np.asarray(parts["lam"])[..., None]
    usq = sum(ui * ui for ui in u)
    if du is None:
        return J * (0.5 * values * usq) + values * (usq - tb * u[0])
    udu = sum(ui * dui for ui, dui in zip(u, du))
    return (
        J * (0.5 * values * usq + (0.5 * J + 2.0) * udu - tb * du[0])
        + values * (usq - tb * u[0])
        - 2.0 * (tb * du[0] * lam + udu * lam * lam)
    )


def _diffusion_values(values, parts):
    """The diffusion curves B_i = 2*X*u_i + 2*du_i*J (None if zero)."""
    u, du = parts["u"], parts["du"]
    if u is None:
        return None
    J = parts["J"]
    if du is None:
        return [2.0 * values * ui for ui in u]
    return [2.0 * values * ui + 2.0 * dui * J for ui, dui in zip(u, du)]


def compute_coefficients(model: VolVolModel, t, strike, state: MarketState) -> Coefficients:
    """Evaluate the full coefficient set of the state equation at one state."""
    grid = state.curve.grid
    values = state.curve.values[None, :]
    parts = _coefficient_parts(model, t, strike, state.spot, values, grid)
    n = grid.n_nodes
    drift = _drift_values(values, parts)
    if drift is None:
        drift_curve = Curve.constant(grid, 0.0)
        diffusion = tuple(Curve.constant(grid, 0.0) for _ in range(model.n_factors))
    else:
        drift_curve = Curve(grid, np.broadcast_to(drift[0], (n,)))
        diffusion = tuple(
            Curve(grid, np.broadcast_to(b[0], (n,)))
            for b in _diffusion_values(values, parts)
        )
    return Coefficients(
        drift=drift_curve,
        diffusion=diffusion,
        vol_shift=float(np.asarray(parts["shift_g"]).reshape(-1)[0]),
        discriminant=float(np.asarray(parts["disc"]).reshape(-1)[0]),
    )


# ---------------------------------------------------------------------------
# Stepping.
# ---------------------------------------------------------------------------


def _step_batch(values, log_spot, t, strike, model, grid, dt, dw, eps, prefix=None):
    """Advance a batch one step; returns (values+, log_spot+, info dict).

    ``dw`` has shape (n_paths, n_factors) with variance dt per entry.
    The info dict carries the per-path discriminant, applied spot vol and
    floor mask of the state that was stepped from.
    """
    spot = np.exp(log_spot)
    parts = _coefficient_parts(model, t, strike, spot, values, grid, prefix=prefix)
    disc = parts["disc"]
    floor = np.abs(disc) < eps
    theta = np.sqrt(np.maximum(np.abs(disc), eps)) - parts["shift_g"]

    drift = _drift_values(values, parts)
    incr = values if drift is None else values + dt * drift
    u, du = parts["u"], parts["du"]
    if u is not None:
        # sum_i B_i dW_i = 2*X*(sum_i u_i dW_i) + 2*J*(sum_i du_i dW_i)
        udw = sum(ui * dw[..., i : i + 1] for i, ui in enumerate(u))
        incr = incr + 2.0 * values * udw
        if du is not None:
            ddw = sum(dui * dw[..., i : i + 1] for i, dui in enumerate(du))
            incr = incr + 2.0 * parts["J"] * ddw
    new_values = shift_values(incr, dt / grid.dx)
    new_log_spot = log_spot + (-0.5 * dt) * theta * theta + theta * dw[..., 0]
    return new_values, new_log_spot, {
        "disc": disc, "theta": theta, "floor": floor,
    }


def step(state: MarketState, model: VolVolModel, strike, dt, dw, eps):
    """One regularized mild-Euler step from a single state.

    ``dw`` is the length-m vector of Brownian increments for the step
    (variance dt each).  Returns the new state and a :class:`StepInfo`.
    Raises :class:`NumericalBlowup` if the step produces non-finite values.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    dw = np.asarray(dw, dtype=np.float64).reshape(1, -1)
    if dw.shape[1] != model.n_factors:
        raise ValueError(
            f"need {model.n_factors} increments per step, got {dw.shape[1]}"
        )
    values = state.curve.values[None, :]
    new_values, new_log_spot, info = _step_batch(
        values, np.array([np.log(state.spot)]), state.t, strike, model,
        state.curve.grid, dt, dw, eps,
    )
    if not (np.all(np.isfinite(new_values)) and np.isfinite(new_log_spot[0])):
        raise NumericalBlowup("non-finite state after one step", step=0)
    new_state = MarketState(
        t=state.t + dt,
        spot=float(np.exp(new_log_spot[0])),
        curve=Curve(state.curve.grid, new_values[0]),
    )
    return new_state, StepInfo(
        discriminant=float(info["disc"][0]),
        spot_vol=float(info["theta"][0]),
        floor_hit=bool(info["floor"][0]),
    )


@dataclass
class BatchResult:
    """Raw arrays from one batch of simulated paths (see simulate_batch)."""

    spot: np.ndarray                     # (p, n_steps+1)
    min_node_value: np.ndarray           # (p,) min over steps and nodes of X
    floor_steps: np.ndarray              # (p,) int
    first_floor_step: np.ndarray         # (p,) int, -1 = never
    min_discriminant: np.ndarray         # (p,)
    blowup_step: np.ndarray              # (p,) int, -1 = none
    checkpoint_xi: Optional[np.ndarray]  # (n_checkpoints, n_maturities, p)
    snapshots: Optional[np.ndarray]      # (p, n_snapshots, n_nodes)
    discriminants: Optional[np.ndarray]  # (p, n_steps+1) when series recorded
    spot_vols: Optional[np.ndarray]      # (p, n_steps+1) when series recorded
    x_head: Optional[np.ndarray]         # (p, n_steps+1) when series recorded


def simulate_batch(
    params: SimParams,
    model: VolVolModel,
    noise: np.ndarray,
    *,
    x0_values: Optional[np.ndarray] = None,
    s0: Optional[float] = None,
    checkpoint_steps=(),
    maturities=(),
    snapshot_steps=None,
    record_series: bool = False,
) -> BatchResult:
    """Run a batch of paths through the stepper on shared parameters.

    ``noise`` is (n_paths, n_steps, n_factors) of Brownian increments with
    variance dt.  ``checkpoint_steps`` asks for the total variance
    I(X)[T - t] at those step indices for every maturity in ``maturities``;
    ``snapshot_steps`` (indices, or "all") stores full curve states;
    ``record_series`` additionally stores the per-step discriminant, applied
    spot vol and short-end curve value.

    Paths that turn non-finite are recorded in ``blowup_step`` and their
    subsequent values are meaningless (NaN); callers exclude them.
    """
    grid = params.grid
    dt, eps, strike = params.dt, params.epsilon_floor, params.strike
    n_steps = params.n_steps
    p = noise.shape[0]
    if noise.shape[1] != n_steps or noise.shape[2] != model.n_factors:
        raise ValueError(
            f"noise shape {noise.shape} does not match "
            f"(paths, {n_steps}, {model.n_factors})"
        )
    if x0_values is None:
        x0_values = np.asarray(params.x0_values)
    if s0 is None:
        s0 = params.s0
    values = np.broadcast_to(x0_values, (p, grid.n_nodes)).astype(np.float64).copy()
    log_spot = np.full(p, np.log(s0))

    if snapshot_steps is None:
        snapshot_steps = np.empty(0, dtype=np.int64)
    elif isinstance(snapshot_steps, str):
        if snapshot_steps != "all":
            raise ValueError(f"snapshot_steps must be indices or 'all', got {snapshot_steps!r}")
        snapshot_steps = np.arange(n_steps + 1, dtype=np.int64)
    else:
        snapshot_steps = np.asarray(snapshot_steps, dtype=np.int64)
    snap_lookup = {int(s): i for i, s in enumerate(snapshot_steps)}
    check_lookup = {}
    for i, s in enumerate(checkpoint_steps):
        check_lookup.setdefault(int(s), []).append(i)

    spot_series = np.empty((p, n_steps + 1))
    snapshots = (
        np.empty((p, len(snapshot_steps), grid.n_nodes)) if len(snapshot_steps) else None
    )
    checkpoint_xi = (
        np.full((len(checkpoint_steps), len(maturities), p), np.nan)
        if len(checkpoint_steps) and len(maturities)
        else None
    )
    discs = np.full((p, n_steps + 1), np.nan) if record_series else None
    thetas = np.full((p, n_steps + 1), np.nan) if record_series else None
    x_head = np.empty((p, n_steps + 1)) if record_series else None

    min_node = np.full(p, np.inf)
    floor_steps = np.zeros(p, dtype=np.int64)
    first_floor = np.full(p, -1, dtype=np.int64)
    min_disc = np.full(p, np.inf)
    blowup_step = np.full(p, -1, dtype=np.int64)
    alive = np.ones(p, dtype=bool)

    mat_arr = np.asarray(maturities, dtype=np.float64)

    for k in range(n_steps + 1):
        t = k * dt
        # Only checkpoint evaluation needs the prefix integral here; when
        # computed it is handed down so the stepper reuses it.
        prefix = (
            prefix_integral_values(values, grid.dx)
            if checkpoint_xi is not None and k in check_lookup
            else None
        )
        np.minimum(min_node, np.min(values, axis=-1), out=min_node)
        # At k = 0 report the initial spot itself, not exp(log(s0)).
        spot_series[:, k] = np.exp(log_spot) if k else s0
        if snapshots is not None and k in snap_lookup:
            snapshots[:, snap_lookup[k], :] = values
        if checkpoint_xi is not None and k in check_lookup:
            for row in check_lookup[k]:
                for j, T in enumerate(mat_arr):
                    if T + 1e-12 < t:
                        continue
                    checkpoint_xi[row, j, :] = interp_values(
                        prefix, min(max(T - t, 0.0), grid.horizon), grid
                    )
        if record_series:
            x_head[:, k] = values[:, 0]
        if k == n_steps:
            if record_series:
                parts = _coefficient_parts(
                    model, t, strike, np.exp(log_spot), values, grid, prefix=prefix
                )
                discs[:, k] = parts["disc"]
                thetas[:, k] = (
                    np.sqrt(np.maximum(np.abs(parts["disc"]), eps)) - parts["shift_g"]
                )
            break

        values, log_spot, info = _step_batch(
            values, log_spot, t, strike, model, grid, dt,
            noise[:, k, :], eps, prefix=prefix,
        )
        if record_series:
            discs[:, k] = info["disc"]
            thetas[:, k] = info["theta"]
        disc = np.asarray(info["disc"], dtype=np.float64)
        if disc.ndim == 0:
            disc = np.full(p, float(disc))
        np.minimum(min_disc, disc, out=min_disc)
        floor = np.broadcast_to(np.asarray(info["floor"]), (p,))
        hit = floor & alive
        floor_steps[hit] += 1
        newly = hit & (first_floor < 0)
        first_floor[newly] = k

        finite = np.isfinite(values.sum(axis=-1)) & np.isfinite(log_spot)
        died = alive & ~finite
        if died.any():
            blowup_step[died] = k
            alive &= finite

    return BatchResult(
        spot=spot_series,
        min_node_value=min_node,
        floor_steps=floor_steps,
        first_floor_step=first_floor,
        min_discriminant=min_disc,
        blowup_step=blowup_step,
        checkpoint_xi=checkpoint_xi,
        snapshots=snapshots,
        discriminants=discs,
        spot_vols=thetas,
        x_head=x_head,
    )


# ---------------------------------------------------------------------------
# Path records.
# ---------------------------------------------------------------------------


@dataclass
class PathRecord:
    """One simulated trajectory with everything needed to re-derive
    maturity-level quantities: spot series, Brownian increments, curve
    snapshots and the per-step short-end scalars."""

    params: SimParams
    model: VolVolModel
    path_index: int
    times: np.ndarray            # (n_steps+1,)
    spot: np.ndarray             # (n_steps+1,)
    increments: np.ndarray       # (n_steps, n_factors), variance dt each
    snapshot_steps: np.ndarray   # (n_snapshots,) step indices
    snapshot_values: np.ndarray  # (n_snapshots, n_nodes)
    discriminants: np.ndarray    # (n_steps+1,)
    spot_vols: np.ndarray        # (n_steps+1,) floor-regularized spot vol
    x_head: np.ndarray           # (n_steps+1,) curve value at x = 0
    diagnostics: StoppingDiagnostics = field(default_factory=StoppingDiagnostics)

    @property
    def grid(self) -> Grid:
        return self.params.grid

    @property
    def strike(self) -> float:
        return self.params.strike

    def snapshot_times(self) -> np.ndarray:
        return self.snapshot_steps * self.params.dt

    def curve_at(self, t: float) -> Curve:
        """The stored curve at time t (must be a recorded snapshot)."""
        k = self.params.step_index(t)
        hits = np.nonzero(self.snapshot_steps == k)[0]
        if not len(hits):
            raise ValueError(f"no curve snapshot recorded at t={t}")
        return Curve(self.grid, self.snapshot_values[hits[0]])

    def state_at(self, t: float) -> MarketState:
        k = self.params.step_index(t)
        return MarketState(t=k * self.params.dt, spot=float(self.spot[k]),
                           curve=self.curve_at(t))

    def to_csv(self, path) -> None:
        """Rows at snapshot steps: t, spot, discriminant, spot vol, short-end
        value, and the total variance for each configured maturity."""
        import csv as _csv

        from .variance import total_variance_from_curve

        mats = self.params.maturities
        series = [total_variance_from_curve(self, T) for T in mats]
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(
                ["t", "spot", "discriminant", "spot_vol", "x_head"]
                + [f"total_var_T={T:g}" for T in mats]
            )
            for i, k in enumerate(self.snapshot_steps):
                t = float(self.times[k])
                row = [
                    repr(t),
                    repr(float(self.spot[k])),
                    repr(float(self.discriminants[k])),
                    repr(float(self.spot_vols[k])),
                    repr(float(self.x_head[k])),
                ]
                for s in series:
                    j = np.nonzero(np.abs(s.times - t) <= 1e-12)[0]
                    row.append(repr(float(s.values[j[0]])) if len(j) else "")
                w.writerow(row)

    def to_json_dict(self) -> dict:
        return {
            "path_index": self.path_index,
            "times": self.times.tolist(),
            "spot": self.spot.tolist(),
            "snapshot_steps": self.snapshot_steps.tolist(),
            "snapshots": [
                {"t": float(self.times[k]), "values": self.snapshot_values[i].tolist()}
                for i, k in enumerate(self.snapshot_steps)
            ],
            "diagnostics": {
                "first_floor_hit": self.diagnostics.first_floor_hit,
                "floor_steps": self.diagnostics.floor_steps,
                "min_discriminant": self.diagnostics.min_discriminant,
            },
        }


def simulate_path(
    params: SimParams,
    model: VolVolModel,
    *,
    x0: Optional[Curve] = None,
    s0: Optional[float] = None,
    noise: Optional[np.ndarray] = None,
    path_index: int = 0,
    snapshot_steps="all",
) -> PathRecord:
    """Simulate a single path and record it fully.

    The initial data default to the parameter set's; ``noise`` defaults to
    the path's own counter-based substream (seed, path_index), which is what
    the ensemble runner uses, so re-simulating path i of an ensemble
    reproduces it bit for bit.  Snapshots default to every step.
    """
    from .rng import path_increments

    x0_values = np.asarray(x0.values if x0 is not None else params.x0_values)
    if x0_values.shape != (params.n_nodes,):
        raise ScenarioError("x0 does not match the configured grid")
    if np.any(x0_values <= 0):
        raise ScenarioError("initial curve must be strictly positive at every node")
    s0 = params.s0 if s0 is None else float(s0)
    if not s0 > 0:
        raise ScenarioError(f"s0 must be positive, got {s0}")
    if noise is None:
        noise = path_increments(
            params.seed, path_index, params.n_steps, model.n_factors, params.dt
        )
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (params.n_steps, model.n_factors):
        raise ValueError(
            f"noise shape {noise.shape}, expected {(params.n_steps, model.n_factors)}"
        )

    out = simulate_batch(
        params, model, noise[None, :, :],
        x0_values=x0_values, s0=s0, snapshot_steps=snapshot_steps,
        record_series=True,
    )
    if out.blowup_step[0] >= 0:
        raise NumericalBlowup(
            f"path {path_index} produced non-finite values at step {out.blowup_step[0]}",
            step=int(out.blowup_step[0]),
            path=path_index,
        )
    if isinstance(snapshot_steps, str):
        snap_idx = np.arange(params.n_steps + 1, dtype=np.int64)
    else:
        snap_idx = np.asarray(snapshot_steps, dtype=np.int64)
    diag = StoppingDiagnostics(
        first_floor_hit=(
            float(out.first_floor_step[0] * params.dt)
            if out.first_floor_step[0] >= 0
            else None
        ),
        floor_steps=int(out.floor_steps[0]),
        min_discriminant=float(out.min_discriminant[0]),
    )
    return PathRecord(
        params=params,
        model=model,
        path_index=path_index,
        times=np.arange(params.n_steps + 1) * params.dt,
        spot=out.spot[0],
        increments=noise,
        snapshot_steps=snap_idx,
        snapshot_values=out.snapshots[0],
        discriminants=out.discriminants[0],
        spot_vols=out.spot_vols[0],
        x_head=out.x_head[0],
        diagnostics=diag,
    )

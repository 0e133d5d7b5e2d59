"""Simulation parameters and strict scenario-file parsing.

A scenario is a JSON object; unknown keys anywhere in it are errors, on the
principle that a silently ignored typo in a research config is worse than a
crash.  Every parameter has a documented default except where noted, so a
minimal scenario can be ``{}``.

Scenario schema::

    {
      "horizon": 1.0,            // curve horizon T* (years)
      "n_nodes": 257,            // grid nodes; dx = horizon/(n_nodes-1)
      "dt": null,                // step size; null -> dx
      "n_steps": null,           // null -> round(horizon/dt)
      "n_paths": 100000,
      "seed": 12345,
      "epsilon_floor": 1e-8,     // variance floor in the spot-vol root
      "strike": 100.0,
      "s0": 100.0,
      "x0": {"flat": 0.04},      // or {"values": [...]} or {"csv": "curve.csv"}
      "volvol": {"family": "none"},
      // families: none | family1 (constant-in-x) | family2 (total-variance)
      //           | adversarial (sign-condition counterexample fixture)
      // extra keys: beta1, beta2 in (0,1]; cutoff_level (family2);
      //             n_factors (family none only)
      "snapshot_times": [0.25, 0.5, 0.75],  // checkpoint times (step-aligned)
      "maturities": [1.0],
      "dump_paths": 0,           // how many leading paths to export as CSV
      "convergence": {"dts": [...], "n_paths": 128}   // optional block
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curve import Curve, Grid
from .errors import ScenarioError
from .volvol import (
    AdversarialVolVol,
    ConstantVolVol,
    TotalVarianceVolVol,
    ZeroVolVol,
)

__all__ = ["VolVolSpec", "SimParams", "load_scenario", "parse_scenario", "build_model"]

_FAMILIES = ("none", "family1", "family2", "adversarial")

# Relative slack when snapping times to step indices.
_TIME_ALIGN_TOL = 1e-9

_DEFAULT_CONVERGENCE_DTS = (1.0 / 64, 1.0 / 128, 1.0 / 256, 1.0 / 512)


@dataclass(frozen=True)
class VolVolSpec:
    """Declarative vol-of-vol choice, reconstructable inside worker processes."""

    family: str = "none"
    beta1: float = 1.0
    beta2: float = 1.0
    cutoff_level: float = 1000.0
    n_factors: int = 2

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ScenarioError(
                f"unknown volvol family {self.family!r}; expected one of {_FAMILIES}"
            )
        if self.family in ("family1", "family2"):
            for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
                if not 0.0 < b <= 1.0:
                    raise ScenarioError(f"{name} must lie in (0, 1], got {b}")
        if self.family == "family2" and not self.cutoff_level > 0:
            raise ScenarioError(f"cutoff_level must be positive, got {self.cutoff_level}")
        if self.family == "none":
            if self.n_factors < 1:
                raise ScenarioError(f"n_factors must be >= 1, got {self.n_factors}")
        elif self.n_factors != 2:
            raise ScenarioError(
                f"family {self.family!r} is a two-driver family; n_factors must be 2"
            )


def build_model(spec: VolVolSpec):
    """Instantiate the vol-of-vol model a spec describes."""
    if spec.family == "none":
        return ZeroVolVol(n_factors=spec.n_factors)
    if spec.family == "family1":
        return ConstantVolVol(beta1=spec.beta1, beta2=spec.beta2)
    if spec.family == "family2":
        return TotalVarianceVolVol(
            beta1=spec.beta1, beta2=spec.beta2, cutoff_level=spec.cutoff_level
        )
    return AdversarialVolVol()


@dataclass(frozen=True)
class SimParams:
    """Validated inputs of a simulation run.

    Construction validates everything; invalid combinations raise
    :class:`ScenarioError`.  Instances are frozen and picklable.
    """

    n_nodes: int = 257
    horizon: float = 1.0
    dt: float | None = None
    n_steps: int | None = None
    n_paths: int = 100_000
    seed: int = 12345
    epsilon_floor: float = 1e-8
    strike: float = 100.0
    s0: float = 100.0
    x0_values: tuple = (0.04,)  # broadcast to every node when length 1
    volvol: VolVolSpec = field(default_factory=VolVolSpec)
    snapshot_times: tuple | None = None  # None -> (0.25, 0.5, 0.75) * horizon
    maturities: tuple | None = None  # None -> (horizon,)
    dump_paths: int = 0
    convergence_dts: tuple = _DEFAULT_CONVERGENCE_DTS
    convergence_paths: int = 128

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ScenarioError(f"n_nodes must be >= 3, got {self.n_nodes}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ScenarioError(f"horizon must be positive, got {self.horizon}")
        if self.dt is None:
            object.__setattr__(self, "dt", self.dx)
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ScenarioError(f"dt must be positive, got {self.dt}")
        if self.n_steps is None:
            object.__setattr__(self, "n_steps", int(round(self.horizon / self.dt)))
        if self.n_steps < 1:
            raise ScenarioError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.dt * self.n_steps > self.horizon * (1 + _TIME_ALIGN_TOL):
            raise ScenarioError(
                f"dt*n_steps = {self.dt * self.n_steps} overruns horizon {self.horizon}"
            )
        if self.n_paths < 1:
            raise ScenarioError(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 <= self.dump_paths <= self.n_paths:
            raise ScenarioError(
                f"dump_paths must lie in [0, n_paths], got {self.dump_paths}"
            )
        if not self.seed >= 0:
            raise ScenarioError(f"seed must be a nonnegative integer, got {self.seed}")
        if not (np.isfinite(self.epsilon_floor) and self.epsilon_floor > 0):
            raise ScenarioError(f"epsilon_floor must be positive, got {self.epsilon_floor}")
        for name, v in (("strike", self.strike), ("s0", self.s0)):
            if not (np.isfinite(v) and v > 0):
                raise ScenarioError(f"{name} must be positive, got {v}")

        x0 = tuple(float(v) for v in self.x0_values)
        if len(x0) == 1:
            x0 = x0 * self.n_nodes
        if len(x0) != self.n_nodes:
            raise ScenarioError(
                f"x0 has {len(x0)} values but the grid has {self.n_nodes} nodes"
            )
        if not all(np.isfinite(v) and v > 0 for v in x0):
            raise ScenarioError("initial curve must be strictly positive at every node")
        object.__setattr__(self, "x0_values", x0)

        if self.snapshot_times is None:
            object.__setattr__(
                self,
                "snapshot_times",
                tuple(f * self.horizon for f in (0.25, 0.5, 0.75)),
            )
        snap = tuple(float(t) for t in self.snapshot_times)
        end = self.dt * self.n_steps
        for t in snap:
            if not 0.0 < t <= end * (1 + _TIME_ALIGN_TOL):
                raise ScenarioError(f"snapshot time {t} outside (0, {end}]")
        object.__setattr__(self, "snapshot_times", snap)
        # Must land on steps: checkpoint statistics are read off step states.
        self.snapshot_steps()

        if self.maturities is None:
            object.__setattr__(self, "maturities", (self.horizon,))
        mats = tuple(float(T) for T in self.maturities)
        for T in mats:
            if not 0.0 < T <= self.horizon * (1 + _TIME_ALIGN_TOL):
                raise ScenarioError(f"maturity {T} outside (0, {self.horizon}]")
        object.__setattr__(self, "maturities", mats)

        if len(self.convergence_dts) < 3:
            raise ScenarioError("convergence needs at least 3 dt levels")
        cdts = tuple(sorted((float(d) for d in self.convergence_dts), reverse=True))
        finest = cdts[-1]
        for d in cdts:
            if not d > 0:
                raise ScenarioError(f"convergence dt must be positive, got {d}")
            ratio = d / finest
            if abs(ratio - round(ratio)) > _TIME_ALIGN_TOL:
                raise ScenarioError(
                    f"convergence dt {d} is not an integer multiple of the finest {finest}"
                )
            steps = self.horizon / d
            if abs(steps - round(steps)) > _TIME_ALIGN_TOL:
                raise ScenarioError(f"convergence dt {d} does not divide the horizon")
        object.__setattr__(self, "convergence_dts", cdts)
        if self.convergence_paths < 2:
            raise ScenarioError("convergence needs at least 2 paths")

    # -- derived views ----------------------------------------------------

    @property
    def dx(self) -> float:
        return self.horizon / (self.n_nodes - 1)

    @property
    def grid(self) -> Grid:
        return Grid(self.n_nodes, self.horizon)

    def x0_curve(self) -> Curve:
        return Curve(self.grid, self.x0_values)

    def step_index(self, t: float) -> int:
        """Map a time to its step index, requiring near-exact alignment."""
        k = round(t / self.dt)
        if abs(k * self.dt - t) > _TIME_ALIGN_TOL * max(1.0, self.horizon):
            raise ScenarioError(
                f"time {t} does not sit on the step grid (dt = {self.dt})"
            )
        return int(k)

    def snapshot_steps(self) -> tuple:
        return tuple(self.step_index(t) for t in self.snapshot_times)

    def canonical_dict(self) -> dict:
        d = {
            "n_nodes": self.n_nodes,
            "horizon": self.horizon,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "epsilon_floor": self.epsilon_floor,
            "strike": self.strike,
            "s0": self.s0,
            "x0_values": list(self.x0_values),
            "volvol": {
                "family": self.volvol.family,
                "beta1": self.volvol.beta1,
                "beta2": self.volvol.beta2,
                "cutoff_level": self.volvol.cutoff_level,
                "n_factors": self.volvol.n_factors,
            },
            "snapshot_times": list(self.snapshot_times),
            "maturities": list(self.maturities),
            "dump_paths": self.dump_paths,
        }
        return d

    def params_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Scenario files.
# ---------------------------------------------------------------------------


def _take(raw: dict, context: str, allowed: dict) -> dict:
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ScenarioError(
            f"unknown key(s) {sorted(unknown)} in {context}; allowed: {sorted(allowed)}"
        )
    out = dict(allowed)
    out.update(raw)
    return out


def _coerce(value, kind, name):
    try:
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{name} must be a {kind.__name__}, got {value!r}") from None


def _parse_x0(block, base_dir: Path):
    if not isinstance(block, dict):
        raise ScenarioError("x0 must be an object like {\"flat\": 0.04}")
    keys = set(block)
    if keys == {"flat"}:
        return (_coerce(block["flat"], float, "x0.flat"),)
    if keys == {"values"}:
        vals = block["values"]
        if not isinstance(vals, list) or not vals:
            raise ScenarioError("x0.values must be a nonempty list")
        return tuple(_coerce(v, float, "x0.values[]") for v in vals)
    if keys == {"csv"}:
        path = base_dir / str(block["csv"])
        if not path.exists():
            raise ScenarioError(f"x0 csv not found: {path}")
        return tuple(Curve.from_csv(path).values.tolist())
    raise ScenarioError(
        f"x0 must have exactly one of 'flat', 'values', 'csv'; got {sorted(keys)}"
    )


def parse_scenario(raw: dict, base_dir=".", **overrides) -> SimParams:
    """Build validated SimParams from a scenario dict plus CLI overrides."""
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    top = _take(
        raw,
        "scenario",
        {
            "horizon": 1.0,
            "n_nodes": 257,
            "dt": None,
            "n_steps": None,
            "n_paths": 100_000,
            "seed": 12345,
            "epsilon_floor": 1e-8,
            "strike": 100.0,
            "s0": 100.0,
            "x0": {"flat": 0.04},
            "volvol": {},
            "snapshot_times": None,
            "maturities": None,
            "dump_paths": 0,
            "convergence": {},
        },
    )
    for key, value in overrides.items():
        if value is not None:
            top[key] = value

    vv = _take(
        top["volvol"] if isinstance(top["volvol"], dict) else
        _bad("volvol must be an object"),
        "volvol",
        {"family": "none", "beta1": 1.0, "beta2": 1.0, "cutoff_level": 1000.0,
         "n_factors": None},
    )
    family = str(vv["family"])
    n_factors = vv["n_factors"]
    if n_factors is None:
        n_factors = 1 if family == "none" else 2
    volvol = VolVolSpec(
        family=family,
        beta1=_coerce(vv["beta1"], float, "volvol.beta1"),
        beta2=_coerce(vv["beta2"], float, "volvol.beta2"),
        cutoff_level=_coerce(vv["cutoff_level"], float, "volvol.cutoff_level"),
        n_factors=_coerce(n_factors, int, "volvol.n_factors"),
    )

    conv = _take(
        top["convergence"] if isinstance(top["convergence"], dict) else
        _bad("convergence must be an object"),
        "convergence",
        {"dts": list(_DEFAULT_CONVERGENCE_DTS), "n_paths": 128},
    )

    def opt(name, kind):
        v = top[name]
        return None if v is None else _coerce(v, kind, name)

    times = top["snapshot_times"]
    if times is not None:
        if not isinstance(times, list) or not times:
            raise ScenarioError("snapshot_times must be a nonempty list")
        times = tuple(_coerce(t, float, "snapshot_times[]") for t in times)
    mats = top["maturities"]
    if mats is not None:
        if not isinstance(mats, list) or not mats:
            raise ScenarioError("maturities must be a nonempty list")
        mats = tuple(_coerce(T, float, "maturities[]") for T in mats)

    return SimParams(
        n_nodes=_coerce(top["n_nodes"], int, "n_nodes"),
        horizon=_coerce(top["horizon"], float, "horizon"),
        dt=opt("dt", float),
        n_steps=opt("n_steps", int),
        n_paths=_coerce(top["n_paths"], int, "n_paths"),
        seed=_coerce(top["seed"], int, "seed"),
        epsilon_floor=_coerce(top["epsilon_floor"], float, "epsilon_floor"),
        strike=_coerce(top["strike"], float, "strike"),
        s0=_coerce(top["s0"], float, "s0"),
        x0_values=_parse_x0(top["x0"], Path(base_dir)),
        volvol=volvol,
        snapshot_times=times,
        maturities=mats,
        dump_paths=_coerce(top["dump_paths"], int, "dump_paths"),
        convergence_dts=tuple(
            _coerce(d, float, "convergence.dts[]") for d in conv["dts"]
        ),
        convergence_paths=_coerce(conv["n_paths"], int, "convergence.n_paths"),
    )


def _bad(message):
    raise ScenarioError(message)


def load_scenario(path, **overrides) -> SimParams:
    """Parse and validate a scenario JSON file; see the module docstring."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {p} is not valid JSON: {exc}") from None
    return parse_scenario(raw, base_dir=p.parent, **overrides)

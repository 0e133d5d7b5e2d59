"""Vol-of-vol models and the short-end scalars derived from them.

A vol-of-vol model maps the market state (t, strike, spot, forward-variance
curve) to the loading curves u = (u1 .. um): the relative diffusion loadings
of the implied-variance surface on the m Brownian drivers, together with
their derivatives in time-to-maturity x.  Component 1 is, by convention, the
one that multiplies the driver of the stock itself.

From the loadings at the short end x = 0 come the scalars that pin the stock
dynamics: the discriminant under the spot-volatility square root, the
moneyness shift G, and the spot volatility itself.

Batch evaluation contract
-------------------------
``loadings_batch`` receives nodal values shaped (n_paths, n_nodes) and
returns ``(u, du)`` where each of ``u`` and ``du`` is either ``None``
(identically zero, so the caller can skip whole terms exactly) or a list of
``n_factors`` arrays broadcastable against the values array, i.e. shaped
(n_paths, n_nodes) or (n_paths, 1).  All shipped models are stateless and
picklable, so batches can be dispatched to worker processes.
"""

from __future__ import annotations

import numpy as np

from .curve import Curve, h1_norm_values, prefix_integral_values
from .errors import DegenerateRoot

__all__ = [
    "VolVolModel",
    "ZeroVolVol",
    "ConstantVolVol",
    "TotalVarianceVolVol",
    "AdversarialVolVol",
    "smooth_cutoff",
    "spot_var_discriminant",
    "spot_vol",
    "spot_vol_abs",
]


# ---------------------------------------------------------------------------
# Default scalar factor functions.
#
# The model families below build every loading as a product
#     (curve gain) * (moneyness gain) * (short gain),
# where each factor is a bounded scalar function chosen so that the
# admissibility conditions checked by fwdvol.admissibility hold with room to
# spare: the curve gain is <= 1 with bounded derivatives, the moneyness gain
# is the bounded, Lipschitz ratio psi(r)/ln(r) realized directly (value 1 at
# r = 1, never an explicit division by ln), and the short gain vanishes at 0
# and stays strictly below sqrt at every positive argument, which is what
# keeps the short-end discriminant nonnegative.
# ---------------------------------------------------------------------------


def default_curve_gain(v):
    """1 / (1 + v^2): bounded by 1, smooth, decaying."""
    return 1.0 / (1.0 + v * v)


def default_curve_gain_slope(v):
    """Derivative of :func:`default_curve_gain`."""
    d = 1.0 + v * v
    return -2.0 * v / (d * d)


def default_moneyness_gain(ratio):
    """The ratio psi(r)/ln(r) for psi(r) = ln(r)/(1 + ln(r)^2).

    Implemented directly as 1/(1 + ln(r)^2) so the at-the-money point
    r = 1 is an ordinary value (1.0), not a 0/0.
    """
    y = np.log(ratio)
    return 1.0 / (1.0 + y * y)


def default_short_gain(sigma):
    """sigma / (1 + sigma)^(3/2): zero at zero and strictly below sqrt(sigma)."""
    return sigma / np.power(1.0 + sigma, 1.5)


def smooth_cutoff(r, level):
    """Smooth even cutoff: 1 on [-level, level], 0 outside (-2*level, 2*level).

    The transition band uses the classical exp(-1/s) bump construction, so
    derivatives of every order vanish at both band edges.
    """
    a = np.abs(np.asarray(r, dtype=np.float64))
    scalar = a.ndim == 0
    s = np.clip((np.atleast_1d(a) - level) / level, 0.0, 1.0)
    out = np.ones_like(s)
    out[s >= 1.0] = 0.0
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    fall = np.exp(-1.0 / sm)
    rise = np.exp(-1.0 / (1.0 - sm))
    out[mid] = rise / (fall + rise)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Models.
# ---------------------------------------------------------------------------


class VolVolModel:
    """Base class: the map (t, strike, spot, curve) -> loading curves."""

    n_factors: int = 0
    # Whether loadings_batch consumes the prefix integral; lets callers that
    # already have it avoid a recompute, and callers that don't skip it.
    uses_prefix: bool = False

    def loadings_batch(self, t, strike, spot, values, grid, prefix=None):
        """Evaluate loadings and their x-derivatives on a batch of curves.

        Parameters
        ----------
        t : float
            Calendar time (the shipped models are time-homogeneous but the
            argument is part of the contract).
        strike, spot : float or (n_paths,) array
            Option strike and current stock prices.
        values : (n_paths, n_nodes) array
            Nodal curve values, one row per path.
        grid : Grid
            The common grid of all rows.
        prefix : optional (n_paths, n_nodes) array
            Precomputed prefix integrals of ``values``; models that need
            them may reuse this instead of recomputing.

        Returns
        -------
        (u, du)
            Each ``None`` (exactly zero) or a list of ``n_factors`` arrays
            broadcastable to the shape of ``values``.
        """
        raise NotImplementedError

    # Convenience single-state API used by verifiers and tests.

    def loadings(self, t, strike, spot, curve: Curve) -> list[Curve]:
        u, _ = self.loadings_batch(t, strike, spot, curve.values[None, :], curve.grid)
        return _as_curves(u, curve, self.n_factors)

    def loadings_dx(self, t, strike, spot, curve: Curve) -> list[Curve]:
        _, du = self.loadings_batch(t, strike, spot, curve.values[None, :], curve.grid)
        return _as_curves(du, curve, self.n_factors)


def _as_curves(parts, ref: Curve, n_factors: int) -> list[Curve]:
    n = ref.grid.n_nodes
    if parts is None:
        zero = Curve.constant(ref.grid, 0.0)
        return [zero] * n_factors
    out = []
    for p in parts:
        row = np.broadcast_to(p[0], (n,))
        out.append(Curve(ref.grid, row))
    return out


class ZeroVolVol(VolVolModel):
    """No vol-of-vol: the curve transports deterministically and the stock
    is lognormal with spot volatility sqrt(X[0])."""

    def __init__(self, n_factors: int = 1):
        if n_factors < 1:
            raise ValueError("need at least one driver")
        self.n_factors = n_factors

    def loadings_batch(self, t, strike, spot, values, grid, prefix=None):
        return None, None


class ConstantVolVol(VolVolModel):
    """Two-driver family whose loadings are constant in time-to-maturity.

    Each loading is
        curve_gain(sup |X|) * moneyness_gain(K/S) * beta_i * short_gain(|X[0]|)
    with the default factor functions above; the x-derivatives vanish
    identically.  ``beta1``/``beta2`` in (0, 1] scale the two drivers; any of
    the factor functions can be overridden with picklable callables that
    accept ndarrays (the overrides are used by the admissibility test-bench,
    not by shipped scenarios).
    """

    n_factors = 2

    def __init__(self, beta1=1.0, beta2=1.0, *, curve_gain=None,
                 moneyness_gain=None, short_gains=None):
        _check_betas(beta1, beta2)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.curve_gain = curve_gain or default_curve_gain
        self.moneyness_gain = moneyness_gain or default_moneyness_gain
        self.short_gains = short_gains

    def _short_pair(self, head):
        if self.short_gains is not None:
            g1, g2 = self.short_gains
            return g1(head), g2(head)
        base = default_short_gain(head)
        return self.beta1 * base, self.beta2 * base

    def loadings_batch(self, t, strike, spot, values, grid, prefix=None):
        sup = np.max(np.abs(values), axis=-1)
        gain = self.curve_gain(sup) * self.moneyness_gain(strike / np.asarray(spot))
        e1, e2 = self._short_pair(np.abs(values[..., 0]))
        u = [(gain * e1)[..., None], (gain * e2)[..., None]]
        return u, None


class TotalVarianceVolVol(VolVolModel):
    """Two-driver family whose loadings read the running total variance.

    The x-dependence enters only through the prefix integral of the curve,
    so at node x the loading is

        curve_gain(I(X)[x]) * moneyness_gain(K/S) * beta_i *
            short_gain(|X[0]|) * cutoff(|X|_H1)

    and its x-derivative follows by the chain rule:
    curve_gain'(I(X)[x]) * X[x] * (same trailing factors).  That analytic
    derivative is what ``loadings_batch`` returns -- no finite differencing.
    The cutoff keeps the derivative bounds valid for outsized curves;
    ``cutoff_level`` defaults high enough that it never activates in shipped
    scenarios.
    """

    n_factors = 2
    uses_prefix = True

    def __init__(self, beta1=1.0, beta2=1.0, cutoff_level=1000.0, *,
                 curve_gain=None, curve_gain_slope=None,
                 moneyness_gain=None, short_gains=None):
        _check_betas(beta1, beta2)
        if (curve_gain is None) != (curve_gain_slope is None):
            raise ValueError("curve_gain and curve_gain_slope go together")
        if not cutoff_level > 0:
            raise ValueError(f"cutoff_level must be positive, got {cutoff_level}")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.cutoff_level = float(cutoff_level)
        self.curve_gain = curve_gain or default_curve_gain
        self.curve_gain_slope = curve_gain_slope or default_curve_gain_slope
        self.moneyness_gain = moneyness_gain or default_moneyness_gain
        self.short_gains = short_gains

    def _short_pair(self, head):
        if self.short_gains is not None:
            g1, g2 = self.short_gains
            return g1(head), g2(head)
        base = default_short_gain(head)
        return self.beta1 * base, self.beta2 * base

    def loadings_batch(self, t, strike, spot, values, grid, prefix=None):
        if prefix is None:
            prefix = prefix_integral_values(values, grid.dx)
        shape = self.curve_gain(prefix)
        slope = self.curve_gain_slope(prefix) * values
        e1, e2 = self._short_pair(np.abs(values[..., 0]))
        common = (
            self.moneyness_gain(strike / np.asarray(spot))
            * smooth_cutoff(h1_norm_values(values, grid.dx), self.cutoff_level)
        )
        a1 = (common * e1)[..., None]
        a2 = (common * e2)[..., None]
        return [shape * a1, shape * a2], [slope * a1, slope * a2]


class AdversarialVolVol(VolVolModel):
    """Deliberately inadmissible model for exercising the validator.

    Its second loading is 2 * sqrt(|X[0]|) with no bounded moneyness or
    curve gain in front, which overshoots the square-root budget of the
    short-end discriminant: away from the money the discriminant goes
    negative even though X[0] > 0.  Never use in simulations.
    """

    n_factors = 2

    def loadings_batch(self, t, strike, spot, values, grid, prefix=None):
        head = 2.0 * np.sqrt(np.abs(values[..., 0]))
        u = [np.zeros_like(head)[..., None], head[..., None]]
        return u, None


def _check_betas(beta1, beta2):
    for name, b in (("beta1", beta1), ("beta2", beta2)):
        if not 0.0 < b <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {b}")


# ---------------------------------------------------------------------------
# Short-end scalars.
# ---------------------------------------------------------------------------


def short_end_scalars(u_heads, x_head, log_moneyness):
    """Discriminant and moneyness shift from loading values at x = 0.

    ``u_heads`` is a list of per-path loading values at the first node
    (or ``None`` for an identically zero model); ``x_head`` the curve values
    at the first node; ``log_moneyness`` is ln(strike/spot).  Returns
    ``(discriminant, vol_shift)`` with the same array shape as ``x_head``.
    """
    if u_heads is None:
        return x_head, np.zeros_like(x_head)
    disc = x_head
    for uj in u_heads[1:]:
        term = uj * log_moneyness
        disc = disc - term * term
    return disc, u_heads[0] * log_moneyness


def _heads(model, t, strike, spot, curve):
    u, _ = model.loadings_batch(t, strike, spot, curve.values[None, :], curve.grid)
    if u is None:
        return None
    return [ui[0, 0] for ui in u]


def spot_var_discriminant(model, t, strike, spot, curve: Curve) -> float:
    """The quantity under the spot-volatility square root.

    X[0] minus the squared log-moneyness-weighted loadings of drivers
    2..m at the short end.  Admissible models keep it nonnegative whenever
    X[0] >= 0; it vanishing is equivalent to X[0] = 0.
    """
    if not spot > 0:
        raise ValueError(f"spot must be positive, got {spot}")
    lam = np.log(strike / spot)
    disc, _ = short_end_scalars(
        _heads(model, t, strike, spot, curve), curve.values[0], lam
    )
    return float(disc)


def spot_vol_abs(model, t, strike, spot, curve: Curve) -> float:
    """Spot volatility with the discriminant forced through |.|.

    Total function used by the regularized dynamics; agrees with
    :func:`spot_vol` whenever the discriminant is nonnegative.
    """
    if not spot > 0:
        raise ValueError(f"spot must be positive, got {spot}")
    lam = np.log(strike / spot)
    disc, g = short_end_scalars(
        _heads(model, t, strike, spot, curve), curve.values[0], lam
    )
    return float(np.sqrt(np.abs(disc)) - g)


def spot_vol(model, t, strike, spot, curve: Curve) -> float:
    """Instantaneous lognormal volatility of the stock.

    sqrt(discriminant) minus the moneyness shift; raises
    :class:`DegenerateRoot` when the discriminant is negative.
    """
    if not spot > 0:
        raise ValueError(f"spot must be positive, got {spot}")
    lam = np.log(strike / spot)
    disc, g = short_end_scalars(
        _heads(model, t, strike, spot, curve), curve.values[0], lam
    )
    if disc < 0:
        raise DegenerateRoot(
            f"negative spot-variance discriminant {disc:.3e} at X[0]={curve.values[0]:.3e}"
        )
    return float(np.sqrt(disc) - g)

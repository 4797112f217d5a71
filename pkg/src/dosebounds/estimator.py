"""Sharp interval estimates for dose-response quantities.

Counterfactual means are self-normalized importance-sampling ratios
sum_i w_i f_i / sum_i w_i whose weights are only known up to a box
[w_lo_i, w_hi_i] (the divisor interval of the sensitivity model, folded with
the outcome model and proposal density).  ``extremize`` finds the exact
extremum of the ratio over the box: after sorting draws by f, the maximizing
weight vector flips a prefix of draws down to their lower bound and leaves
the rest at their upper bound, so a single sweep with running partial sums
suffices.

Curves over a dose grid come in three flavors: ``capo_interval`` conditions
on one covariate row, ``apo_interval`` pools the draws of a whole instance
set before extremizing, and ``cacd_interval`` turns a CAPO band into a band
on the derivative via conservative central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sensitivity import (
    DivisorBounds,
    DivisorEngine,
    PartialIdentificationError,
    SensitivityModel,
)

__all__ = [
    "DegenerateDrawsError",
    "WeightedDraw",
    "IntervalCurve",
    "extremize",
    "outcome_draws",
    "capo_interval",
    "apo_interval",
    "apo_band_matrix",
    "cacd_interval",
]


class DegenerateDrawsError(ValueError):
    """All upper weights vanish, so the ratio estimate is 0/0."""


# Importance weights p/(d g) blow up when a divisor bound is subnormal (for
# example a nominal density underflowing at the support edge).  Capping keeps
# every partial sum finite; a capped instance still dominates the pooled
# ratio, so the extremum moves by at most ~n max|f| / _WEIGHT_CAP.
_WEIGHT_CAP = 1e30


@dataclass(frozen=True)
class WeightedDraw:
    """One Monte Carlo draw with its statistic and admissible weight range."""

    f: float
    w_lo: float
    w_hi: float
    draw: int = 0
    instance: int = 0

    def __post_init__(self):
        if not math.isfinite(self.f):
            raise ValueError("draw statistic must be finite")
        if not (0.0 <= self.w_lo <= self.w_hi) or not math.isfinite(self.w_hi):
            raise ValueError("weights must satisfy 0 <= w_lo <= w_hi < inf")


def _padded_cumsum(x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[:-1] + (x.shape[-1] + 1,), dtype=float)
    np.cumsum(x, axis=-1, out=out[..., 1:])
    return out


def _max_ratio_sorted(f: np.ndarray, w_lo: np.ndarray, w_hi: np.ndarray) -> np.ndarray:
    """Maximum of sum(w f)/sum(w) over the weight box; f ascending on last axis.

    Starting from all-upper weights, dragging the smallest-f draws down to
    their lower weight raises the ratio for as long as the directional
    derivative sum_i w_i (f_j - f_i) stays negative; the first non-negative
    derivative ends the sweep.  Partial sums make every test O(1).
    """
    sl = _padded_cumsum(w_lo)
    pl = _padded_cumsum(w_lo * f)
    sh = _padded_cumsum(w_hi)
    ph = _padded_cumsum(w_hi * f)
    sh_total = sh[..., -1:]
    ph_total = ph[..., -1:]
    s_state = sl[..., :-1] + sh_total - sh[..., :-1]
    p_state = pl[..., :-1] + ph_total - ph[..., :-1]
    delta = f * s_state - p_state
    stop = delta >= 0.0
    n = f.shape[-1]
    prefix = np.where(stop.any(axis=-1), np.argmax(stop, axis=-1), n)
    pick = np.expand_dims(prefix, axis=-1)
    num = np.take_along_axis(pl, pick, -1) + ph_total - np.take_along_axis(ph, pick, -1)
    den = np.take_along_axis(sl, pick, -1) + sh_total - np.take_along_axis(sh, pick, -1)
    # an all-zero weight box (every instance masked out) yields NaN
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.squeeze(num / den, axis=-1)


def extremize(draws: Sequence[WeightedDraw], direction: str = "max") -> float:
    """Exact extremum of the self-normalized ratio over the weight box."""
    if direction not in ("max", "min"):
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    if len(draws) == 0:
        raise ValueError("extremize requires at least one draw")
    f = np.array([d.f for d in draws], dtype=float)
    w_lo = np.array([d.w_lo for d in draws], dtype=float)
    w_hi = np.array([d.w_hi for d in draws], dtype=float)
    if not np.any(w_hi > 0.0):
        raise DegenerateDrawsError("all upper weights are zero")
    draw_ids = np.array([d.draw for d in draws])
    inst_ids = np.array([d.instance for d in draws])
    key = f if direction == "max" else -f
    # stable order on (key, instance, draw) makes the result independent of
    # the order draws were supplied in
    order = np.lexsort((draw_ids, inst_ids, key))
    value = _max_ratio_sorted(key[order], w_lo[order], w_hi[order])
    return float(value) if direction == "max" else -float(value)


def _bernoulli_extremes(p_one, d_lo, d_hi, valid=None):
    """(lo, hi) of the pooled ratio for exact binary-outcome draws.

    The last axis indexes instances; leading axes are batch dimensions
    (for example a whole gamma grid at once).  The two outcome values per
    instance enumerate the support, so weights are p(y)/d under a
    counting-measure proposal, and draw blocks arrive already sorted by f.
    ``valid`` zeroes out the weight box of instances whose divisor floor
    crossed zero, removing them from the pooled ratio; batch rows with no
    valid instance left come back as NaN.
    """
    p_one, d_lo, d_hi = np.broadcast_arrays(
        np.asarray(p_one, dtype=float),
        np.asarray(d_lo, dtype=float),
        np.asarray(d_hi, dtype=float),
    )
    p_zero = 1.0 - p_one
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        boxes = [
            np.minimum(ratio, _WEIGHT_CAP)
            for ratio in (p_zero / d_hi, p_zero / d_lo, p_one / d_hi, p_one / d_lo)
        ]
    if valid is not None:
        boxes = [np.where(valid, box, 0.0) for box in boxes]
    w_lo_zero, w_hi_zero, w_lo_one, w_hi_one = boxes
    zeros = np.zeros_like(p_one)
    ones = np.ones_like(p_one)

    def cat(a, b):
        return np.concatenate([a, b], axis=-1)

    hi = _max_ratio_sorted(cat(zeros, ones), cat(w_lo_zero, w_lo_one), cat(w_hi_zero, w_hi_one))
    lo = -_max_ratio_sorted(cat(-ones, zeros), cat(w_lo_one, w_lo_zero), cat(w_hi_one, w_hi_zero))
    return lo, hi


def outcome_draws(
    outcome_model,
    t: float,
    x_subset,
    divisors: DivisorBounds,
    proposal=None,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    statistic: Callable | None = None,
) -> list[WeightedDraw]:
    """Weighted draws for the instances in ``x_subset`` at dose ``t``.

    Discrete outcome models (anything exposing ``outcome_support``) are
    enumerated exactly.  Continuous models need a ``proposal`` with
    ``sample(n, rng)`` and ``density(y)`` plus an ``outcome_density(y, x, t)``
    method on the model; the same ``n_samples`` proposal draws are shared by
    every instance.  ``statistic`` maps outcomes to the quantity averaged
    (identity by default).
    """
    x_subset = np.atleast_2d(np.asarray(x_subset, dtype=float))
    d_lo = np.broadcast_to(np.asarray(divisors.d_lo, dtype=float), (len(x_subset),))
    d_hi = np.broadcast_to(np.asarray(divisors.d_hi, dtype=float), (len(x_subset),))
    if np.any(d_lo <= 0.0):
        raise PartialIdentificationError(
            "divisor lower bound is not positive; the outcome bound is undefined here"
        )
    stat = statistic if statistic is not None else (lambda y: y)
    draws: list[WeightedDraw] = []
    if proposal is None:
        if not hasattr(outcome_model, "outcome_support"):
            raise ValueError(
                "outcome model has no finite support; supply a proposal density"
            )
        for j, x in enumerate(x_subset):
            values, probs = outcome_model.outcome_support(x, t)
            for i, (value, prob) in enumerate(zip(values, probs)):
                draws.append(
                    WeightedDraw(
                        f=float(stat(value)),
                        w_lo=float(min(prob / d_hi[j], _WEIGHT_CAP)),
                        w_hi=float(min(prob / d_lo[j], _WEIGHT_CAP)),
                        draw=i,
                        instance=j,
                    )
                )
        return draws
    if n_samples is None or n_samples < 1:
        raise ValueError("continuous proposals need n_samples >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    ys = np.asarray(proposal.sample(n_samples, rng), dtype=float)
    g = np.asarray(proposal.density(ys), dtype=float)
    if np.any(g <= 0.0):
        raise ValueError("proposal density must be positive at its own samples")
    for j, x in enumerate(x_subset):
        density = np.asarray(outcome_model.outcome_density(ys, x, t), dtype=float)
        base = density / (g * n_samples)
        for i, y in enumerate(ys):
            draws.append(
                WeightedDraw(
                    f=float(stat(y)),
                    w_lo=float(min(base[i] / d_hi[j], _WEIGHT_CAP)),
                    w_hi=float(min(base[i] / d_lo[j], _WEIGHT_CAP)),
                    draw=i,
                    instance=j,
                )
            )
    return draws


@dataclass
class IntervalCurve:
    """Lower/upper bound curves over a dose grid.

    ``undefined_mask`` marks grid points where at least one pooled instance
    lost its upper bound (divisor crossed zero); such points keep whatever
    bound the surviving instances give, or NaN when none survive, and should
    be read as vacuously wide.  ``one_sided`` (derivative curves only) marks
    endpoints computed with a one-sided difference.
    """

    t_grid: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    target: str
    undefined_mask: np.ndarray
    one_sided: np.ndarray | None = None

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.undefined_mask = np.asarray(self.undefined_mask, dtype=bool)
        if not (self.t_grid.shape == self.lo.shape == self.hi.shape == self.undefined_mask.shape):
            raise ValueError("curve arrays must share one shape")
        if self.t_grid.ndim != 1 or len(self.t_grid) == 0:
            raise ValueError("t_grid must be a non-empty 1-d array")
        if np.any(np.diff(self.t_grid) <= 0.0):
            raise ValueError("t_grid must be strictly increasing")
        defined = ~self.undefined_mask
        if np.any(self.lo[defined] > self.hi[defined] + 1e-12):
            raise ValueError("lower curve exceeds upper curve")

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def _models_pair(models):
    try:
        return models.outcome, models.propensity
    except AttributeError:
        outcome, propensity = models
        return outcome, propensity


def _curve_from_engine(
    engine: DivisorEngine,
    prob_one_at: Callable[[float], np.ndarray],
    t_grid: np.ndarray,
    gamma_factor: float,
    target: str,
) -> IntervalCurve:
    n = len(t_grid)
    lo = np.empty(n)
    hi = np.empty(n)
    mask = np.zeros(n, dtype=bool)
    for i, t in enumerate(t_grid):
        d_lo, d_hi = engine.bounds(float(t), gamma_factor)
        d_lo = np.atleast_1d(np.asarray(d_lo, dtype=float))
        d_hi = np.atleast_1d(np.asarray(d_hi, dtype=float))
        keep = d_lo > 0.0
        p_one = np.atleast_1d(np.asarray(prob_one_at(float(t)), dtype=float))
        mask[i] = not keep.all()
        lo[i], hi[i] = _bernoulli_extremes(p_one, d_lo, d_hi, valid=keep)
    return IntervalCurve(np.asarray(t_grid, dtype=float), lo, hi, target, mask)


def capo_interval(
    models,
    sens: SensitivityModel,
    x,
    t_grid,
    gamma_factor: float,
    trust_precision=None,
) -> IntervalCurve:
    """Covariate-conditional outcome bounds over a dose grid."""
    outcome, propensity = _models_pair(models)
    params = propensity.predict(np.asarray(x, dtype=float))
    engine = DivisorEngine(sens, params, trust_precision=trust_precision)
    return _curve_from_engine(
        engine, lambda t: outcome.predict(x, t), np.asarray(t_grid, dtype=float), gamma_factor, "capo"
    )


def apo_interval(
    models,
    sens: SensitivityModel,
    xs,
    t_grid,
    gamma_factor: float,
    trust_precision=None,
) -> IntervalCurve:
    """Population-averaged outcome bounds: draws of all instances are pooled
    into a single extremization per grid point."""
    outcome, propensity = _models_pair(models)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if len(xs) == 0:
        raise ValueError("apo_interval needs at least one instance")
    params = propensity.predict(xs)
    engine = DivisorEngine(sens, params, trust_precision=trust_precision)
    return _curve_from_engine(
        engine, lambda t: outcome.predict(xs, t), np.asarray(t_grid, dtype=float), gamma_factor, "apo"
    )


def apo_band_matrix(engine: DivisorEngine, prob_matrix, t_grid, gamma_grid):
    """Pooled outcome bounds for every (dose, gamma) pair in one sweep.

    ``prob_matrix[i, j]`` holds P(Y=1 | x_j, t_grid[i]); the engine carries
    the per-instance propensity parameters.  Returns (lo, hi, undefined)
    arrays of shape (len(t_grid), len(gamma_grid)).  Sweeping the whole gamma
    grid per dose amortizes the compound-density work, which only depends on
    the dose.  Instances whose divisor floor crosses zero at a given (dose,
    gamma) are dropped from that pooled ratio and the point is flagged; when
    every instance drops, the bounds are NaN.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    gammas = np.asarray(gamma_grid, dtype=float)
    prob_matrix = np.atleast_2d(np.asarray(prob_matrix, dtype=float))
    if prob_matrix.shape[0] != len(t_grid):
        raise ValueError("prob_matrix must have one row per dose grid point")
    n_dose, n_gamma = len(t_grid), len(gammas)
    n_instances = prob_matrix.shape[1]
    lo = np.empty((n_dose, n_gamma))
    hi = np.empty((n_dose, n_gamma))
    undefined = np.zeros((n_dose, n_gamma), dtype=bool)
    gamma_col = gammas[:, None]
    for i, t in enumerate(t_grid):
        d_lo, d_hi = engine.bounds(float(t), gamma_col)
        d_lo = np.broadcast_to(np.asarray(d_lo, dtype=float), (n_gamma, n_instances))
        d_hi = np.broadcast_to(np.asarray(d_hi, dtype=float), (n_gamma, n_instances))
        valid = d_lo > 0.0
        undefined[i] = ~valid.all(axis=-1)
        p_one = np.broadcast_to(prob_matrix[i], (n_gamma, n_instances))
        lo[i], hi[i] = _bernoulli_extremes(p_one, d_lo, d_hi, valid=valid)
    return lo, hi, undefined


def cacd_interval(capo_curve: IntervalCurve, h: float) -> IntervalCurve:
    """Conservative derivative bounds from a CAPO (or APO) band.

    Interior points use the worst-case central quotient
    (lo(t+h) - hi(t-h)) / (2h) (and its mirror image for the upper bound);
    endpoints fall back to one-sided quotients and are flagged.  ``h`` must
    equal a whole number of grid steps.
    """
    if not (h > 0.0) or not math.isfinite(h):
        raise ValueError("h must be a positive finite step")
    grid = capo_curve.t_grid
    if len(grid) < 2:
        raise ValueError("derivative needs at least two grid points")
    spacing = np.diff(grid)
    dt = float(spacing[0])
    if np.any(np.abs(spacing - dt) > 1e-9 * max(dt, 1.0)):
        raise ValueError("derivative bounds need a uniform dose grid")
    steps = round(h / dt)
    if steps < 1 or abs(steps * dt - h) > 1e-9 * max(h, 1.0):
        raise ValueError(f"h={h!r} is not a whole number of grid steps (dt={dt!r})")
    n = len(grid)
    if steps >= n:
        raise ValueError("h spans the whole grid")
    lo_in, hi_in, mask_in = capo_curve.lo, capo_curve.hi, capo_curve.undefined_mask
    lo = np.empty(n)
    hi = np.empty(n)
    mask = np.zeros(n, dtype=bool)
    one_sided = np.zeros(n, dtype=bool)
    for i in range(n):
        fwd = i + steps
        back = i - steps
        if back >= 0 and fwd < n:
            lo[i] = (lo_in[fwd] - hi_in[back]) / (2.0 * h)
            hi[i] = (hi_in[fwd] - lo_in[back]) / (2.0 * h)
            mask[i] = mask_in[fwd] or mask_in[back]
        elif fwd < n:
            lo[i] = (lo_in[fwd] - hi_in[i]) / h
            hi[i] = (hi_in[fwd] - lo_in[i]) / h
            mask[i] = mask_in[fwd] or mask_in[i]
            one_sided[i] = True
        else:
            lo[i] = (lo_in[i] - hi_in[back]) / h
            hi[i] = (hi_in[i] - lo_in[back]) / h
            mask[i] = mask_in[i] or mask_in[back]
            one_sided[i] = True
    return IntervalCurve(grid, lo, hi, "cacd", mask, one_sided=one_sided)

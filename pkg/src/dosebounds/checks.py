"""Randomized self-check suites.

Each suite replays a correctness argument with fresh random inputs: the
divisor closed forms against adaptive quadrature, the weight-box extremizer
against exhaustive vertex enumeration, and the training gradients against
central finite differences.  The test suite freezes the same comparisons at
fixed seeds; the CLI exposes them so any build can be re-validated at an
arbitrary sample count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import WeightedDraw, extremize
from .models import outcome_loss_grad, propensity_loss_grad
from .seeds import substream
from .sensitivity import (
    BetaPropensity,
    GammaPropensity,
    GaussianPropensity,
    compound,
    lambda_expectation_bounds,
    trust_params,
)
from .specfun import integrate

__all__ = [
    "CheckResult",
    "SUITE_NAMES",
    "check_closed_forms",
    "check_extremizer",
    "check_gradients",
    "resolve_suite",
    "run_suites",
]

SUITE_NAMES = ("closed-forms", "extremizer", "gradients")

_ALIASES = {"table1": "closed-forms", "alg1": "extremizer"}

_MAX_REPORTED_FAILURES = 5


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one suite: worst observed error against its tolerance."""

    suite: str
    n_checked: int
    max_error: float
    tolerance: float
    failures: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def describe(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        line = (
            f"{self.suite}: {verdict} ({self.n_checked} comparisons, "
            f"max error {self.max_error:.3e}, tolerance {self.tolerance:.1e})"
        )
        if self.failures:
            line += "\n" + "\n".join(f"  worst: {item}" for item in self.failures)
        return line


def resolve_suite(name: str) -> str:
    canonical = _ALIASES.get(name, name)
    if canonical not in SUITE_NAMES:
        known = ", ".join(SUITE_NAMES + tuple(sorted(_ALIASES)))
        raise ValueError(f"unknown suite {name!r}; expected one of {known}")
    return canonical


def _folded_power_expectation(q, gamma, sign):
    """E_q[gamma^(sign |tau|)] by adaptive quadrature."""
    lo, hi = q.support
    s = math.log(gamma)

    def integrand(tau):
        tau = np.asarray(tau, dtype=float)
        dens = q.pdf(tau)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.exp(sign * s * np.abs(tau)) * dens
        # the density underflows to zero long before the power overflows
        return np.where(dens > 0.0, vals, 0.0)

    return integrate(integrand, lo, hi)


def _draw_scheme_case(kind, rng):
    r = float(rng.uniform(0.5, 5.0))
    if kind == "beta":
        propensity = BetaPropensity(
            float(rng.uniform(0.8, 30.0)), float(rng.uniform(0.8, 30.0))
        )
        t = float(rng.uniform(0.02, 0.98))
    elif kind == "gamma":
        # rate floor keeps E[Gamma^tau] convergent for every gamma <= 2.5
        propensity = GammaPropensity(
            float(rng.uniform(0.5, 30.0)), float(rng.uniform(1.2, 8.0))
        )
        t = float(rng.uniform(0.0, 3.0))
    else:
        propensity = GaussianPropensity(
            float(rng.uniform(-2.0, 2.0)), float(rng.uniform(0.2, 2.0))
        )
        t = float(rng.uniform(-2.0, 2.0))
    return propensity, t, r


def check_closed_forms(samples: int = 200, seed: int = 0, tolerance: float = 1e-7) -> CheckResult:
    """Closed-form folded-power expectations versus adaptive quadrature.

    Draws random propensity parameters, dose, and trust precision for each
    compound family, then compares both expectation bounds at several budget
    levels.  Errors are relative.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = substream(seed, "closed-forms")
    worst = 0.0
    failures = []
    n_checked = 0
    for kind in ("beta", "gamma", "gaussian"):
        for _ in range(samples):
            propensity, t, r = _draw_scheme_case(kind, rng)
            q = compound(propensity, trust_params(kind, t, r))
            for gamma in (1.1, 1.5, 2.5):
                lo, hi = lambda_expectation_bounds(q, gamma)
                for side, got in (("lo", lo), ("hi", hi)):
                    want = _folded_power_expectation(q, gamma, -1.0 if side == "lo" else 1.0)
                    err = abs(got - want) / abs(want)
                    n_checked += 1
                    if err > worst:
                        worst = err
                    if err > tolerance and len(failures) < _MAX_REPORTED_FAILURES:
                        failures.append(
                            f"{kind} q={q} gamma={gamma} {side}: "
                            f"closed={got!r} quadrature={want!r} rel_err={err:.3e}"
                        )
    return CheckResult("closed-forms", n_checked, worst, tolerance, tuple(failures))


def _vertex_extrema(f, w_lo, w_hi):
    """Extremes of sum(w f)/sum(w) over all corners of the weight box."""
    n = len(f)
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    weights = np.where(bits == 1, w_hi, w_lo)
    den = weights.sum(axis=1)
    ratios = (weights @ f)[den > 0.0] / den[den > 0.0]
    return float(ratios.min()), float(ratios.max())


def check_extremizer(
    instances: int = 1000, max_n: int = 12, seed: int = 0, tolerance: float = 1e-12
) -> CheckResult:
    """Greedy ratio extremization versus brute force over all 2^n vertices."""
    if instances < 1 or max_n < 1:
        raise ValueError("instances and max_n must be positive")
    rng = substream(seed, "extremizer")
    worst = 0.0
    failures = []
    for _ in range(instances):
        n = int(rng.integers(1, max_n + 1))
        f = rng.normal(scale=2.0, size=n)
        if rng.uniform() < 0.2:
            f = np.round(f, 1)  # force ties
        w_lo = rng.uniform(0.0, 1.0, size=n)
        w_lo[rng.uniform(size=n) < 0.3] = 0.0
        w_hi = w_lo + rng.uniform(0.1, 1.0, size=n)
        draws = [
            WeightedDraw(f=float(f[j]), w_lo=float(w_lo[j]), w_hi=float(w_hi[j]), draw=j)
            for j in range(n)
        ]
        want_min, want_max = _vertex_extrema(f, w_lo, w_hi)
        err = max(
            abs(extremize(draws, "max") - want_max),
            abs(extremize(draws, "min") - want_min),
        )
        if err > worst:
            worst = err
        if err > tolerance and len(failures) < _MAX_REPORTED_FAILURES:
            failures.append(f"n={n} f={f.tolist()} box=({w_lo.tolist()}, {w_hi.tolist()})")
    return CheckResult("extremizer", 2 * instances, worst, tolerance, tuple(failures))


def _central_difference(loss, params, step):
    grad = np.empty_like(params)
    for i in range(len(params)):
        bumped = params.copy()
        bumped[i] = params[i] + step
        up = loss(bumped)
        bumped[i] = params[i] - step
        down = loss(bumped)
        grad[i] = (up - down) / (2.0 * step)
    return grad


def check_gradients(
    points: int = 100, seed: int = 0, step: float = 1e-5, tolerance: float = 1e-4
) -> CheckResult:
    """Analytic training gradients versus central finite differences.

    The error is per-coordinate relative with a 1e-8 floor, matching
    |analytic - numeric| <= tol * |numeric| + 1e-8 * tol.
    """
    if points < 1:
        raise ValueError("points must be positive")
    rng = substream(seed, "gradients")
    x = rng.normal(size=(40, 3))
    t = rng.uniform(0.05, 0.95, size=40)
    y = (rng.uniform(size=40) < 0.5).astype(float)
    cases = [
        ("outcome", 5, lambda p: outcome_loss_grad(p, x, t, y)),
        ("propensity", 8, lambda p: propensity_loss_grad(p, x, t)),
    ]
    worst = 0.0
    failures = []
    for label, size, loss_grad in cases:
        for _ in range(points):
            params = rng.normal(scale=20.0, size=size)
            _, grad = loss_grad(params)
            numeric = _central_difference(lambda p: loss_grad(p)[0], params, step)
            err = float(np.max(np.abs(grad - numeric) / (np.abs(numeric) + 1e-8)))
            if err > worst:
                worst = err
            if err > tolerance and len(failures) < _MAX_REPORTED_FAILURES:
                failures.append(f"{label} params={params.tolist()} rel_err={err:.3e}")
    return CheckResult("gradients", 2 * points, worst, tolerance, tuple(failures))


def run_suites(
    names=None,
    samples: int = 200,
    instances: int = 1000,
    max_n: int = 12,
    points: int = 100,
    seed: int = 0,
) -> tuple[CheckResult, ...]:
    """Run the named suites (all of them by default) and collect results."""
    chosen = SUITE_NAMES if names is None else tuple(resolve_suite(n) for n in names)
    results = []
    for name in chosen:
        if name == "closed-forms":
            results.append(check_closed_forms(samples=samples, seed=seed))
        elif name == "extremizer":
            results.append(check_extremizer(instances=instances, max_n=max_n, seed=seed))
        else:
            results.append(check_gradients(points=points, seed=seed))
    return tuple(results)

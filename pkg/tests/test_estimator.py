import itertools
import math

import numpy as np
import pytest

from dosebounds.estimator import (
    DegenerateDrawsError,
    IntervalCurve,
    WeightedDraw,
    apo_interval,
    cacd_interval,
    capo_interval,
    extremize,
    outcome_draws,
)
from dosebounds.sensitivity import (
    CMSM,
    BetaPropensity,
    DeltaMSM,
    DivisorBounds,
    PartialIdentificationError,
    Uniform,
    divisor_bounds,
)


def brute_force_ratio(draws, direction):
    """Extremum over every corner of the weight box."""
    best = None
    for corner in itertools.product(*[(d.w_lo, d.w_hi) for d in draws]):
        total = sum(corner)
        if total == 0.0:
            continue
        value = sum(w * d.f for w, d in zip(corner, draws)) / total
        if best is None:
            best = value
        else:
            best = max(best, value) if direction == "max" else min(best, value)
    return best


def make_draws(f, w_lo, w_hi):
    return [
        WeightedDraw(f=float(fi), w_lo=float(li), w_hi=float(hi), draw=i)
        for i, (fi, li, hi) in enumerate(zip(f, w_lo, w_hi))
    ]


class BernoulliStub:
    """Outcome model with a fixed success probability per instance."""

    def __init__(self, prob_fn):
        self.prob_fn = prob_fn

    def predict(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self.prob_fn(x, t))
        return np.array([self.prob_fn(row, t) for row in x])

    def outcome_support(self, x, t):
        p = float(self.prob_fn(np.asarray(x, dtype=float), t))
        return np.array([0.0, 1.0]), np.array([1.0 - p, p])


class PropensityStub:
    """Returns fixed Beta parameters, one row per instance."""

    def __init__(self, alphas, betas):
        self.alphas = np.asarray(alphas, dtype=float)
        self.betas = np.asarray(betas, dtype=float)

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            i = int(x[0])
            return BetaPropensity(float(self.alphas[i]), float(self.betas[i]))
        idx = x[:, 0].astype(int)
        return BetaPropensity(self.alphas[idx], self.betas[idx])


class TestExtremize:
    def test_worked_example(self):
        draws = make_draws([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0])
        assert extremize(draws, "max") == pytest.approx(2.25, abs=1e-14)
        assert extremize(draws, "min") == pytest.approx(1.75, abs=1e-14)

    def test_bernoulli_worked_example(self):
        # p(Y=1) = 0.7 with divisor box [0.5, 2.0]
        draws = [
            WeightedDraw(f=0.0, w_lo=0.15, w_hi=0.6, draw=0),
            WeightedDraw(f=1.0, w_lo=0.35, w_hi=1.4, draw=1),
        ]
        assert extremize(draws, "max") == pytest.approx(1.4 / 1.55, rel=1e-14)
        assert extremize(draws, "min") == pytest.approx(0.35 / 0.95, rel=1e-14)

    def test_fixed_weights_reduce_to_weighted_mean(self):
        rng = np.random.default_rng(42)
        f = rng.normal(size=9)
        w = rng.uniform(0.1, 2.0, size=9)
        draws = make_draws(f, w, w)
        expected = float(np.sum(f * w) / np.sum(w))
        assert extremize(draws, "max") == pytest.approx(expected, rel=1e-13)
        assert extremize(draws, "min") == pytest.approx(expected, rel=1e-13)

    @pytest.mark.parametrize("direction", ["max", "min"])
    def test_matches_corner_enumeration(self, direction):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(1, 9))
            f = rng.normal(size=n)
            w_lo = rng.uniform(0.0, 1.0, size=n)
            w_hi = w_lo + rng.uniform(0.0, 1.0, size=n)
            if not np.any(w_hi > 0.0):
                continue
            draws = make_draws(f, w_lo, w_hi)
            assert extremize(draws, direction) == pytest.approx(
                brute_force_ratio(draws, direction), abs=1e-12
            )

    def test_order_invariance_with_ties(self):
        rng = np.random.default_rng(42)
        f = np.array([0.0, 1.0, 1.0, 1.0, 2.0, 2.0])
        draws = [
            WeightedDraw(f=float(fi), w_lo=0.1 * (i + 1), w_hi=0.5 * (i + 1), draw=i, instance=i % 2)
            for i, fi in enumerate(f)
        ]
        reference_max = extremize(draws, "max")
        reference_min = extremize(draws, "min")
        for _ in range(20):
            shuffled = [draws[i] for i in rng.permutation(len(draws))]
            assert extremize(shuffled, "max") == reference_max
            assert extremize(shuffled, "min") == reference_min

    def test_validation(self):
        draws = make_draws([1.0], [0.5], [1.0])
        with pytest.raises(ValueError):
            extremize(draws, "up")
        with pytest.raises(ValueError):
            extremize([], "max")
        with pytest.raises(DegenerateDrawsError):
            extremize(make_draws([1.0, 2.0], [0.0, 0.0], [0.0, 0.0]), "max")
        with pytest.raises(ValueError):
            WeightedDraw(f=1.0, w_lo=-0.1, w_hi=1.0)
        with pytest.raises(ValueError):
            WeightedDraw(f=1.0, w_lo=0.5, w_hi=0.2)
        with pytest.raises(ValueError):
            WeightedDraw(f=math.nan, w_lo=0.1, w_hi=0.2)


class GaussianOutcomeStub:
    """Continuous outcome Y | X, T ~ Normal(x_0 + t / 2, 1)."""

    def outcome_density(self, ys, x, t):
        m = float(np.asarray(x, dtype=float)[0]) + 0.5 * float(t)
        z = np.asarray(ys, dtype=float) - m
        return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


class NormalProposal:
    def __init__(self, mu, sigma):
        self.mu = float(mu)
        self.sigma = float(sigma)

    def sample(self, n, rng):
        return rng.normal(self.mu, self.sigma, size=n)

    def density(self, ys):
        z = (np.asarray(ys, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))


class TestOutcomeDraws:
    def test_discrete_enumeration(self):
        model = BernoulliStub(lambda x, t: 0.7)
        divisors = DivisorBounds(np.array([0.5, 1.0]), np.array([2.0, 1.0]))
        draws = outcome_draws(model, 0.3, [[0.0], [1.0]], divisors)
        assert len(draws) == 4
        by_key = {(d.instance, d.draw): d for d in draws}
        assert by_key[(0, 0)].f == 0.0 and by_key[(0, 1)].f == 1.0
        assert by_key[(0, 1)].w_lo == pytest.approx(0.35)
        assert by_key[(0, 1)].w_hi == pytest.approx(1.4)
        assert by_key[(1, 1)].w_lo == pytest.approx(0.7)
        assert by_key[(1, 1)].w_hi == pytest.approx(0.7)

    def test_rejects_nonpositive_divisor(self):
        model = BernoulliStub(lambda x, t: 0.7)
        with pytest.raises(PartialIdentificationError):
            outcome_draws(model, 0.3, [[0.0]], DivisorBounds(-0.1, 2.0))

    def test_continuous_needs_proposal_and_samples(self):
        with pytest.raises(ValueError):
            outcome_draws(GaussianOutcomeStub(), 0.3, [[0.0]], DivisorBounds(1.0, 1.0))
        with pytest.raises(ValueError):
            outcome_draws(
                GaussianOutcomeStub(),
                0.3,
                [[0.0]],
                DivisorBounds(1.0, 1.0),
                proposal=NormalProposal(0.0, 2.0),
            )

    def test_continuous_importance_sampling_recovers_mean(self):
        # with a unit divisor box the ratio collapses to a self-normalized
        # importance-sampling estimate of E[Y | X, T]
        model = GaussianOutcomeStub()
        x = [0.4]
        t = 0.6
        target_mean = 0.4 + 0.3
        draws = outcome_draws(
            model,
            t,
            [x],
            DivisorBounds(1.0, 1.0),
            proposal=NormalProposal(0.5, 2.0),
            n_samples=20000,
            rng=np.random.default_rng(42),
        )
        hi = extremize(draws, "max")
        lo = extremize(draws, "min")
        assert hi == pytest.approx(lo, abs=1e-12)
        assert hi == pytest.approx(target_mean, abs=0.05)

    def test_continuous_box_brackets_identified_value(self):
        model = GaussianOutcomeStub()
        common = dict(
            proposal=NormalProposal(0.5, 2.0),
            n_samples=4000,
            rng=np.random.default_rng(42),
        )
        point = outcome_draws(model, 0.6, [[0.4]], DivisorBounds(1.0, 1.0), **common)
        common["rng"] = np.random.default_rng(42)
        band = outcome_draws(model, 0.6, [[0.4]], DivisorBounds(0.5, 2.0), **common)
        assert extremize(band, "min") < extremize(point, "min")
        assert extremize(band, "max") > extremize(point, "max")

    def test_statistic_transforms_outcomes(self):
        model = BernoulliStub(lambda x, t: 0.7)
        draws = outcome_draws(
            model, 0.3, [[0.0]], DivisorBounds(1.0, 1.0), statistic=lambda y: 3.0 * y
        )
        assert extremize(draws, "max") == pytest.approx(2.1)


class TestCurves:
    t_grid = np.linspace(0.1, 0.9, 5)

    def outcome(self):
        return BernoulliStub(lambda x, t: 0.2 + 0.5 * t)

    def test_unit_gamma_collapses_to_prediction(self):
        models = (self.outcome(), PropensityStub([3.0], [3.0]))
        curve = capo_interval(models, DeltaMSM("balanced-beta"), [0.0], self.t_grid, 1.0)
        expected = 0.2 + 0.5 * self.t_grid
        np.testing.assert_allclose(curve.lo, expected, atol=1e-9)
        np.testing.assert_allclose(curve.hi, expected, atol=1e-9)
        assert not curve.undefined_mask.any()
        assert curve.target == "capo"

    def test_bands_bracket_nominal_and_nest(self):
        models = (self.outcome(), PropensityStub([4.0], [2.0]))
        expected = 0.2 + 0.5 * self.t_grid
        prev = None
        for gamma in (1.2, 1.6, 2.3):
            curve = capo_interval(models, DeltaMSM("beta"), [0.0], self.t_grid, gamma)
            assert np.all(curve.lo <= expected + 1e-12)
            assert np.all(curve.hi >= expected - 1e-12)
            assert np.all(curve.lo >= -1e-12) and np.all(curve.hi <= 1.0 + 1e-12)
            if prev is not None:
                assert np.all(curve.lo <= prev.lo + 1e-12)
                assert np.all(curve.hi >= prev.hi - 1e-12)
            prev = curve

    def test_apo_of_single_instance_equals_capo(self):
        models = (self.outcome(), PropensityStub([3.0, 5.0], [3.0, 2.0]))
        capo = capo_interval(models, DeltaMSM("balanced-beta"), [1.0], self.t_grid, 1.7)
        apo = apo_interval(models, DeltaMSM("balanced-beta"), [[1.0]], self.t_grid, 1.7)
        np.testing.assert_allclose(apo.lo, capo.lo, rtol=1e-13)
        np.testing.assert_allclose(apo.hi, capo.hi, rtol=1e-13)
        assert apo.target == "apo"

    def test_cmsm_capo_matches_uniform(self):
        # per-instance the CMSM box is the uniform box scaled by the nominal
        # density, and the self-normalized ratio is scale invariant
        models = (self.outcome(), PropensityStub([4.0], [2.0]))
        cmsm = capo_interval(models, CMSM(), [0.0], self.t_grid, 1.8)
        uniform = capo_interval(models, Uniform(), [0.0], self.t_grid, 1.8)
        np.testing.assert_allclose(cmsm.lo, uniform.lo, rtol=1e-12)
        np.testing.assert_allclose(cmsm.hi, uniform.hi, rtol=1e-12)

    def test_apo_pools_draws_before_extremizing(self):
        models = (self.outcome(), PropensityStub([3.0, 6.0], [3.0, 1.5]))
        xs = [[0.0], [1.0]]
        gamma = 1.9
        t = 0.35
        curve = apo_interval(models, DeltaMSM("beta"), xs, [t, 0.5], gamma)
        params = models[1].predict(np.asarray(xs))
        bounds = divisor_bounds(DeltaMSM("beta"), params, t, gamma)
        draws = outcome_draws(self.outcome(), t, xs, bounds)
        assert curve.lo[0] == pytest.approx(extremize(draws, "min"), rel=1e-12)
        assert curve.hi[0] == pytest.approx(extremize(draws, "max"), rel=1e-12)

    def test_apo_flags_and_drops_undefined_instances(self):
        # at gamma = 2.5 and t = 0.9 the far-from-dose instance loses its
        # positive divisor floor while the nearby instance keeps it
        models = (self.outcome(), PropensityStub([9.0, 1.0], [2.0, 9.0]))
        xs = [[0.0], [1.0]]
        grid = [0.5, 0.9]
        mixed = apo_interval(models, DeltaMSM("beta"), xs, grid, 2.5)
        assert not mixed.undefined_mask[0]
        assert mixed.undefined_mask[1]
        healthy_only = apo_interval(models, DeltaMSM("beta"), [[0.0]], grid, 2.5)
        assert not healthy_only.undefined_mask.any()
        assert mixed.lo[1] == pytest.approx(healthy_only.lo[1], rel=1e-12)
        assert mixed.hi[1] == pytest.approx(healthy_only.hi[1], rel=1e-12)
        all_dropped = apo_interval(models, DeltaMSM("beta"), [[1.0]], grid, 2.5)
        assert all_dropped.undefined_mask[1]
        assert math.isnan(all_dropped.lo[1]) and math.isnan(all_dropped.hi[1])

    def test_lower_bound_never_above_upper(self):
        rng = np.random.default_rng(42)
        outcome = self.outcome()
        for _ in range(10):
            models = (
                outcome,
                PropensityStub(rng.uniform(0.8, 9.0, 3), rng.uniform(0.8, 9.0, 3)),
            )
            xs = [[0.0], [1.0], [2.0]]
            gamma = float(rng.uniform(1.0, 2.5))
            curve = apo_interval(models, DeltaMSM("balanced-beta"), xs, self.t_grid, gamma)
            good = ~np.isnan(curve.lo)
            assert np.all(curve.lo[good] <= curve.hi[good] + 1e-12)

    def test_apo_requires_instances(self):
        models = (self.outcome(), PropensityStub([3.0], [3.0]))
        with pytest.raises(ValueError):
            apo_interval(models, Uniform(), np.empty((0, 1)), self.t_grid, 1.5)


class TestApoBandMatrix:
    t_grid = np.linspace(0.0, 1.0, 7)
    gamma_grid = np.linspace(1.0, 2.5, 6)

    def case(self, alphas, betas):
        outcome = BernoulliStub(lambda x, t: 0.2 + 0.5 * t)
        propensity = PropensityStub(alphas, betas)
        xs = [[float(i)] for i in range(len(alphas))]
        prob = np.array([outcome.predict(np.asarray(xs), t) for t in self.t_grid])
        return outcome, propensity, xs, prob

    @pytest.mark.parametrize(
        "model",
        [DeltaMSM("balanced-beta"), DeltaMSM("beta"), CMSM(), Uniform()],
        ids=["balanced", "beta", "cmsm", "uniform"],
    )
    def test_matches_per_gamma_curves(self, model):
        from dosebounds.estimator import apo_band_matrix
        from dosebounds.sensitivity import DivisorEngine

        outcome, propensity, xs, prob = self.case([9.0, 3.0, 1.0], [2.0, 3.0, 9.0])
        engine = DivisorEngine(model, propensity.predict(np.asarray(xs)))
        lo, hi, undefined = apo_band_matrix(engine, prob, self.t_grid, self.gamma_grid)
        assert lo.shape == hi.shape == undefined.shape == (7, 6)
        for g, gamma in enumerate(self.gamma_grid):
            curve = apo_interval((outcome, propensity), model, xs, self.t_grid, float(gamma))
            np.testing.assert_array_equal(undefined[:, g], curve.undefined_mask)
            np.testing.assert_allclose(lo[:, g], curve.lo, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(hi[:, g], curve.hi, rtol=1e-13, atol=1e-15)

    def test_binary_msm_matches_per_gamma_curves(self):
        from dosebounds.estimator import apo_band_matrix
        from dosebounds.sensitivity import BinaryMSM, DivisorEngine

        outcome, propensity, xs, prob = self.case([2.0, 5.0], [5.0, 2.0])
        model = BinaryMSM()
        engine = DivisorEngine(model, propensity.predict(np.asarray(xs)))
        lo, hi, _ = apo_band_matrix(engine, prob, self.t_grid, self.gamma_grid)
        for g, gamma in enumerate(self.gamma_grid):
            curve = apo_interval((outcome, propensity), model, xs, self.t_grid, float(gamma))
            np.testing.assert_allclose(lo[:, g], curve.lo, rtol=1e-13)
            np.testing.assert_allclose(hi[:, g], curve.hi, rtol=1e-13)

    def test_all_instances_dropped_yields_nan(self):
        from dosebounds.estimator import apo_band_matrix
        from dosebounds.sensitivity import DivisorEngine

        outcome, propensity, xs, prob = self.case([1.0, 0.9], [9.0, 12.0])
        engine = DivisorEngine(DeltaMSM("beta"), propensity.predict(np.asarray(xs)))
        lo, hi, undefined = apo_band_matrix(engine, prob, self.t_grid, np.array([1.0, 2.5]))
        assert undefined[-1, 1]
        assert not undefined[:, 0].any()
        dropped = undefined & np.isnan(lo)
        assert np.array_equal(np.isnan(lo), np.isnan(hi))
        assert dropped.sum() >= 1

    def test_validates_prob_matrix_shape(self):
        from dosebounds.estimator import apo_band_matrix
        from dosebounds.sensitivity import DivisorEngine

        _, propensity, xs, prob = self.case([3.0], [3.0])
        engine = DivisorEngine(Uniform(), propensity.predict(np.asarray(xs)))
        with pytest.raises(ValueError):
            apo_band_matrix(engine, prob[:-1], self.t_grid, self.gamma_grid)


def flat_curve(grid, fn, half_width=0.0):
    values = np.array([fn(t) for t in grid])
    return IntervalCurve(
        t_grid=np.asarray(grid, dtype=float),
        lo=values - half_width,
        hi=values + half_width,
        target="capo",
        undefined_mask=np.zeros(len(grid), dtype=bool),
    )


class TestCacd:
    grid = np.linspace(0.0, 1.0, 51)

    def test_central_difference_exact_for_quadratic(self):
        curve = flat_curve(self.grid, lambda t: t * t)
        h = float(self.grid[1] - self.grid[0])
        deriv = cacd_interval(curve, h)
        interior = slice(1, -1)
        np.testing.assert_allclose(deriv.lo[interior], 2.0 * self.grid[interior], atol=1e-12)
        np.testing.assert_allclose(deriv.hi[interior], 2.0 * self.grid[interior], atol=1e-12)
        assert deriv.one_sided[0] and deriv.one_sided[-1]
        assert not deriv.one_sided[1:-1].any()
        # one-sided quotients of t^2 give 2t +- h
        assert deriv.lo[0] == pytest.approx(2.0 * self.grid[0] + h, abs=1e-12)
        assert deriv.hi[-1] == pytest.approx(2.0 * self.grid[-1] - h, abs=1e-12)
        assert deriv.target == "cacd"

    def test_band_width_combines_endpoint_widths(self):
        curve = flat_curve(self.grid, lambda t: math.sin(t), half_width=0.05)
        h = 2.0 * float(self.grid[1] - self.grid[0])
        deriv = cacd_interval(curve, h)
        expected_width = (0.05 + 0.05 + 0.05 + 0.05) / (2.0 * h)
        np.testing.assert_allclose(deriv.width[2:-2], expected_width, atol=1e-12)
        mid = (deriv.lo + deriv.hi) / 2.0
        np.testing.assert_allclose(
            mid[2:-2], np.cos(self.grid[2:-2]), atol=h * h
        )

    def test_wider_step_tightens_band(self):
        curve = flat_curve(self.grid, lambda t: t, half_width=0.05)
        dt = float(self.grid[1] - self.grid[0])
        narrow = cacd_interval(curve, dt)
        wide = cacd_interval(curve, 5.0 * dt)
        assert np.all(wide.width[5:-5] < narrow.width[5:-5])

    def test_mask_propagates_through_stencil(self):
        curve = flat_curve(self.grid, lambda t: t)
        curve.undefined_mask[10] = True
        deriv = cacd_interval(curve, 2.0 * float(self.grid[1] - self.grid[0]))
        assert deriv.undefined_mask[8] and deriv.undefined_mask[12]
        assert not deriv.undefined_mask[9] and not deriv.undefined_mask[11]

    def test_validation(self):
        curve = flat_curve(self.grid, lambda t: t)
        dt = float(self.grid[1] - self.grid[0])
        with pytest.raises(ValueError):
            cacd_interval(curve, 0.0)
        with pytest.raises(ValueError):
            cacd_interval(curve, 1.5 * dt)
        with pytest.raises(ValueError):
            cacd_interval(curve, 60.0 * dt)
        ragged = IntervalCurve(
            t_grid=np.array([0.0, 0.1, 0.35]),
            lo=np.zeros(3),
            hi=np.ones(3),
            target="capo",
            undefined_mask=np.zeros(3, dtype=bool),
        )
        with pytest.raises(ValueError):
            cacd_interval(ragged, 0.1)


class TestIntervalCurve:
    def test_validation(self):
        grid = np.array([0.0, 0.5, 1.0])
        with pytest.raises(ValueError):
            IntervalCurve(grid, np.ones(3), np.zeros(3), "capo", np.zeros(3, dtype=bool))
        with pytest.raises(ValueError):
            IntervalCurve(grid[::-1], np.zeros(3), np.ones(3), "capo", np.zeros(3, dtype=bool))
        with pytest.raises(ValueError):
            IntervalCurve(grid, np.zeros(2), np.ones(3), "capo", np.zeros(3, dtype=bool))

    def test_undefined_points_exempt_from_order_check(self):
        grid = np.array([0.0, 1.0])
        curve = IntervalCurve(
            grid,
            np.array([0.2, np.nan]),
            np.array([0.8, np.nan]),
            "apo",
            np.array([False, True]),
        )
        assert curve.width[0] == pytest.approx(0.6)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    conjugate_generalization_error,
    conjugate_posterior,
    conjugate_predictive_logpdf,
    conjugate_predictive_ratio,
    conjugate_training_error,
)
from quasireg.error_estimators import (
    ErrorRecord,
    error_record,
    functional_variance,
    gen_from_train,
    generalization_error,
    posterior_mean_empirical_loss,
    predictive_log_density,
    training_error,
)
from quasireg.exceptions import EstimationError, InvalidArgumentError
from quasireg.model_zoo import Dataset, GaussianMeanModel, make_model, sample_true
from quasireg.posterior_mcmc import PosteriorDraws


def _record(**overrides):
    base = dict(g_n=0.01, t_n=-0.01, v_n=2.0, ewkn=0.0, n=100, beta=1.0, mc_se=1e-4)
    base.update(overrides)
    return ErrorRecord(**base)


class TestRecord:
    def test_negative_variance(self):
        with pytest.raises(EstimationError):
            _record(v_n=-1e-9)

    @pytest.mark.parametrize("field", ["g_n", "t_n", "v_n", "ewkn", "mc_se"])
    def test_non_finite(self, field):
        with pytest.raises(EstimationError):
            _record(**{field: float("nan")})

    def test_gen_from_train(self):
        assert gen_from_train(_record(t_n=0.3, v_n=0.0)) == 0.3
        assert gen_from_train(_record(t_n=-0.01, v_n=2.0, beta=1.5, n=100)) == pytest.approx(0.02)


class TestPredictive:
    def test_single_draw(self):
        model = make_model("example1")
        w = np.array([0.3, -0.2, 0.7])
        x = model.sample_x(np.random.default_rng(0), 5)
        got = predictive_log_density(PosteriorDraws.from_points(model, w), x)
        np.testing.assert_array_equal(got, model.log_p(x, w[None])[0])

    def test_equal_draws(self):
        model = make_model("regular", d=2)
        w = np.array([[0.1, 0.4], [0.1, 0.4]])
        x = np.array([0.5, -1.0])
        c = model.log_p(x[None], w[:1])[0, 0]
        assert predictive_log_density(PosteriorDraws.from_points(model, w), x) == c

    def test_extreme_log_densities_do_not_underflow(self):
        model = make_model("regular", d=1, w_max=100.0)
        draws = PosteriorDraws.from_points(model, [[60.0], [61.0]])
        got = predictive_log_density(draws, np.array([0.0]))
        expect = np.logaddexp(-1800, -1860.5) - math.log(2) - 0.5 * math.log(2 * math.pi)
        assert np.isfinite(got) and got == pytest.approx(expect, rel=1e-12)

    def test_conjugate_at_zero(self):
        model = make_model("conjugate1d")
        data = sample_true(model, 50, 1)
        m, v = conjugate_posterior(data.observations)
        w = np.random.default_rng(2).normal(m, math.sqrt(v), (100_000, 1))
        got = predictive_log_density(PosteriorDraws.from_points(model, w), np.array([0.0]))
        ratio = conjugate_predictive_ratio(w, [0.0], m, v)
        se = ratio.std(ddof=1) / math.sqrt(len(ratio))
        assert abs(got - conjugate_predictive_logpdf(0.0, m, v)) < 3 * se

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            predictive_log_density(PosteriorDraws(np.empty((1, 0, 1)), 1.0, make_model("regular", d=1)), [0.0])


class _HalfLine(GaussianMeanModel):
    """Puts zero density on positive observations."""

    def log_p(self, x, w):
        out = super().log_p(x, w)
        return np.where(np.asarray(x)[..., 0][None, :] > 0, -np.inf, out)


class _Broken(GaussianMeanModel):
    def log_p(self, x, w):
        out = super().log_p(x, w)
        out[0, -1] = np.nan
        return out


def _stub(cls):
    return cls("stub", 1, 1, lambda w: w)


class TestFailures:
    def test_impossible_observation(self):
        model = _stub(_HalfLine)
        draws = PosteriorDraws.from_points(model, [[0.0], [0.2]])
        assert predictive_log_density(draws, np.array([1.0])) == -np.inf
        with pytest.raises(EstimationError):
            generalization_error(model, draws, 1000, seed=0)
        with pytest.raises(EstimationError):
            training_error(model, Dataset(np.array([[-1.0], [2.0]])), draws)

    def test_nan_log_density(self):
        model = _stub(_Broken)
        draws = PosteriorDraws.from_points(model, [[0.0], [0.2]])
        data = Dataset(np.array([[0.1], [0.3]]))
        for fn in (training_error, functional_variance, posterior_mean_empirical_loss):
            with pytest.raises(EstimationError, match="draw 0"):
                fn(model, data, draws)

    def test_small_n_eval(self):
        model = make_model("regular", d=1)
        with pytest.raises(InvalidArgumentError):
            generalization_error(model, PosteriorDraws.from_points(model, [[0.0]]), 999)


class TestAtTruth:
    @pytest.mark.parametrize("spec", [("canonical", (1, 2)), ("example1", None), ("example3", None)])
    def test_zero(self, spec):
        name, blocks = spec
        model = make_model(name, blocks=blocks)
        data = sample_true(model, 40, 3)
        draws = PosteriorDraws.from_points(model, np.zeros((3, model.d)))
        rec = error_record(model, data, draws, n_eval=2000, seed=4)
        assert abs(rec.g_n) < 1e-12 and abs(rec.t_n) < 1e-12 and abs(rec.ewkn) < 1e-12
        assert rec.v_n < 1e-25

    def test_single_draw_variance_is_exactly_zero(self):
        model = make_model("example1")
        draws = PosteriorDraws.from_points(model, [0.2, -0.1, 0.4])
        assert functional_variance(model, sample_true(model, 30, 1), draws) == 0.0


@pytest.fixture(scope="module")
def exact():
    model = make_model("conjugate1d")
    data = sample_true(model, 50, 5)
    m, v = conjugate_posterior(data.observations)
    w = np.random.default_rng(6).normal(m, math.sqrt(v), (20_000, 1))
    return model, data, m, v, w


class TestConjugate:
    def test_generalization(self, exact):
        model, _, m, v, w = exact
        g, mc_se = generalization_error(model, PosteriorDraws.from_points(model, w), 20_000, seed=7)
        h = conjugate_predictive_ratio(w[:4000], np.random.default_rng(8).standard_normal(4000), m, v)
        se_draws = h.std(ddof=1) / math.sqrt(len(w))
        assert abs(g - conjugate_generalization_error(m, v)) < 3 * math.hypot(mc_se, se_draws)

    def test_training(self, exact):
        model, data, m, v, w = exact
        t = training_error(model, data, PosteriorDraws.from_points(model, w))
        h = conjugate_predictive_ratio(w, data.observations, m, v)
        se = h.std(ddof=1) / math.sqrt(len(h))
        assert abs(t - conjugate_training_error(data.observations, m, v)) < 3 * se

    def test_functional_variance(self, exact):
        # Var_w[-(x - w)^2 / 2] with w ~ N(m, v): v (x - m)^2 + v^2 / 2
        model, data, m, v, w = exact
        x = data.observations[:, 0]
        got = functional_variance(model, data, PosteriorDraws.from_points(model, w))
        assert got == pytest.approx(np.sum(v * (x - m) ** 2 + v * v / 2), rel=0.05)

    def test_ewkn(self, exact):
        # K_n(w) = mean_i [(x_i - w)^2 - x_i^2] / 2, linear-quadratic in w
        model, data, m, v, w = exact
        x = data.observations[:, 0]
        got = posterior_mean_empirical_loss(model, data, PosteriorDraws.from_points(model, w))
        kn = 0.5 * (np.mean((x[None, :] - w) ** 2, axis=1) - np.mean(x**2))
        assert got == pytest.approx(kn.mean(), rel=1e-10, abs=1e-14)
        expect = 0.5 * (m * m + v) - m * x.mean()
        assert abs(got - expect) < 3 * kn.std(ddof=1) / math.sqrt(len(kn))

    def test_record_matches_separate_calls(self, exact):
        model, data, _, _, w = exact
        draws = PosteriorDraws.from_points(model, w[:2000])
        rec = error_record(model, data, draws, n_eval=2000, seed=9)
        assert rec.t_n == pytest.approx(training_error(model, data, draws), rel=1e-12)
        assert rec.v_n == pytest.approx(functional_variance(model, data, draws), rel=1e-12)
        assert rec.ewkn == pytest.approx(posterior_mean_empirical_loss(model, data, draws), rel=1e-12)
        assert (rec.g_n, rec.mc_se) == generalization_error(model, draws, 2000, seed=9)


def test_mc_se_scales_with_n_eval():
    model = make_model("regular", d=1)
    draws = PosteriorDraws.from_points(model, np.random.default_rng(0).normal(0.05, 0.1, (500, 1)))
    ratios = [
        generalization_error(model, draws, 8000, seed=s)[1] / generalization_error(model, draws, 4000, seed=s + 100)[1]
        for s in range(10)
    ]
    assert np.mean(ratios) == pytest.approx(1 / math.sqrt(2), abs=0.05)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_functional_variance_nonnegative(seed, n_draws):
    model = make_model("example1")
    rng = np.random.default_rng(seed)
    data = sample_true(model, 20, seed)
    draws = PosteriorDraws.from_points(model, rng.uniform(-1, 1, (n_draws, 3)))
    assert functional_variance(model, data, draws) >= 0


def test_permutation_invariance():
    model = make_model("example1")
    data = sample_true(model, 60, 2)
    draws = PosteriorDraws.from_points(model, np.random.default_rng(3).uniform(-0.3, 0.3, (200, 3)))
    shuffled = Dataset(data.observations[np.random.default_rng(4).permutation(data.n)])
    for fn in (training_error, posterior_mean_empirical_loss, functional_variance):
        assert fn(model, shuffled, draws) == pytest.approx(fn(model, data, draws), rel=1e-12)

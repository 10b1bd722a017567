"""Replication-level checks beyond the headline criteria.

These reuse the session runs from ``conftest`` and add two smaller ones
(``regular(4)`` and ``example3``).
"""
import math

import pytest

from conftest import load_config
from quasireg.harness import ExperimentConfig, run_experiment
from quasireg.invariant_estimators import laplace_fit

pytestmark = pytest.mark.slow


def _beta(agg, beta):
    return next(s for s in agg.per_beta if s.beta == beta)


def _agree(a, se_a, b, se_b, k=3.0):
    return abs(a - b) <= k * math.hypot(se_a or 0.0, se_b or 0.0)


@pytest.fixture(scope="module")
def regular4_run():
    cfg = load_config("regular_2.yaml").to_dict()
    cfg.update(model={"name": "regular", "d": 4}, betas=[1.0], replicates=100)
    return run_experiment(ExperimentConfig.from_dict(cfg))


@pytest.fixture(scope="module")
def example3_run():
    cfg = load_config("example1.yaml").to_dict()
    cfg.update(model={"name": "example3"}, replicates=100)
    return run_experiment(ExperimentConfig.from_dict(cfg))


def test_harness_checks_pass(canonical_run, regular_run):
    for agg in (canonical_run, regular_run):
        for c in agg.checks:
            print(c.line())
        assert agg.all_passed


class TestCanonical:
    def test_symmetry(self, canonical_run):
        s = _beta(canonical_run, 1.0)
        assert abs(s.mean["g_n"] + s.mean["t_n"]) < 0.3 * 2 / (2 * 100)

    def test_ewkn_vanishes_at_beta_one(self, canonical_run):
        assert abs(_beta(canonical_run, 1.0).mean["ewkn"]) <= 0.2 * 2 / (2 * 100)

    def test_ewkn_at_beta_two(self, canonical_run):
        assert _beta(canonical_run, 2.0).mean["ewkn"] == pytest.approx(-0.005, rel=0.3)


class TestRegular:
    def test_functional_variance(self, regular_run):
        s = _beta(regular_run, 1.0)
        assert s.beta * s.mean["v_n"] / 2 == pytest.approx(1.0, rel=0.25)

    def test_two_beta(self, regular_run):
        est = regular_run.estimates["two_beta"]
        assert 0.8 <= est.lambda_hat <= 1.2 and 0.8 <= est.nu_hat <= 1.2

    def test_nu_from_v_regular4(self, regular4_run):
        assert regular4_run.estimates["v_n_average@beta=1"].nu_hat == pytest.approx(2.0, rel=0.25)


class TestMethodAgreement:
    def test_laplace_vs_symbolic(self):
        cfg = load_config("canonical_1_2.yaml")
        est = laplace_fit(cfg.build_model(), cfg.laplace["t_grid"], int(cfg.laplace["mc_per_t"]), seed=cfg.master_seed)
        assert _agree(est.lambda_hat, est.se["lambda"], 1.0, 0.0)

    @pytest.mark.xfail(strict=True, reason="finite-n bias of the two-beta solve at n=100 exceeds its replicate SE")
    def test_two_beta_vs_symbolic(self, canonical_run):
        est = canonical_run.estimates["two_beta"]
        assert _agree(est.lambda_hat, est.se["lambda"], 1.0, 0.0)

    @pytest.mark.parametrize("run", ["canonical_run", "example1_run", "example3_run", "regular_run"])
    def test_nu_v_average_vs_two_beta(self, run, request):
        agg = request.getfixturevalue(run)
        est = agg.estimates["two_beta"]
        v = agg.estimates["v_n_average@beta=1"]
        print(f"{run}: nu from V {v.nu_hat:.4f} +/- {v.se['nu']:.4f}, two-beta {est.nu_hat:.4f} +/- {est.se['nu']:.4f}")
        assert _agree(v.nu_hat, v.se["nu"], est.nu_hat, est.se["nu"])

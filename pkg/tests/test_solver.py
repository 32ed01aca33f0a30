import numpy as np
import pytest
from numpy.testing import assert_allclose

import helpers
from aireml import SolveOptions, Theta, fit, initial_theta, likelihood, validate
from aireml import Dataset, VarianceSpec
from aireml.errors import DegenerateResidual
from aireml.solver import monotone_slack

VARIANTS = ("newton", "fisher", "ai")


def assert_monotone(report):
    ll = report.trace.loglik_values()
    slack = monotone_slack(float(np.abs(ll).max()))
    assert np.all(np.diff(ll) >= -slack)


class TestClosedFormModel:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_converges_to_closed_form_estimate(self, variant):
        report = fit(helpers.t1_model(),
                     SolveOptions(variant=variant, init=Theta(1.0), tol=1e-10))
        assert report.converged
        assert report.n_iter <= 10
        assert abs(report.theta_hat.sigma2 - 5 / 3) <= 1e-8
        assert_monotone(report)

    def test_default_init_already_stationary(self):
        report = fit(helpers.t1_model())
        assert report.converged
        assert report.n_iter == 0


class TestInitialTheta:
    def test_closed_form_for_intercept_only(self):
        assert_allclose(initial_theta(helpers.t1_model()).sigma2, 5 / 3, rtol=1e-12)

    def test_stated_rule_with_group(self):
        theta0 = initial_theta(helpers.t2_model())
        assert_allclose(theta0.sigma2, 5 / 3, rtol=1e-12)
        assert_allclose(theta0.kappa, [0.1])

    def test_log_scale_initializes_in_log_space(self):
        theta0 = initial_theta(helpers.t2_model(scale="log"))
        assert_allclose(theta0.kappa, [np.log(0.1)])

    def test_response_in_fixed_span_is_degenerate(self):
        m = validate(Dataset(y=np.full(4, 3.0), X=np.ones((4, 1)), Z=np.zeros((4, 0))),
                     VarianceSpec())
        with pytest.raises(DegenerateResidual):
            initial_theta(m)
        with pytest.raises(DegenerateResidual):
            fit(m)


class TestFitBehavior:
    def test_variants_reach_same_stationary_point(self):
        model = helpers.one_way_model(10, 20, seed=9)
        results = [fit(model, SolveOptions(variant=v, tol=1e-10)) for v in VARIANTS]
        thetas = np.array([r.theta_hat.as_vector() for r in results])
        assert all(r.converged for r in results)
        assert np.abs(thetas - thetas[0]).max() <= 1e-6
        for r in results:
            assert_monotone(r)

    def test_stationarity_at_reported_estimate(self):
        model = helpers.one_way_model(8, 15, seed=12)
        opts = SolveOptions(variant="ai", tol=1e-9)
        report = fit(model, opts)
        assert report.converged
        s = likelihood.score(model, report.theta_hat).inf_norm()
        assert s <= opts.tol

    def test_log_scale_matches_natural_scale_fit(self):
        nat = fit(helpers.one_way_model(12, 10, seed=3), SolveOptions(tol=1e-10))
        logm = helpers.one_way_model(12, 10, seed=3, scale="log")
        logfit = fit(logm, SolveOptions(tol=1e-10))
        assert logfit.converged
        assert_allclose(np.exp(logfit.theta_hat.kappa), nat.theta_hat.kappa, rtol=1e-6)
        assert_allclose(logfit.theta_hat.sigma2, nat.theta_hat.sigma2, rtol=1e-6)

    def test_max_iter_status(self):
        model = helpers.one_way_model(10, 20, seed=4)
        report = fit(model, SolveOptions(max_iter=1, init=Theta(5.0, [3.0])))
        assert report.status == "max_iter"
        assert not report.converged
        assert len(report.trace) == 2      # initial point plus one step

    def test_explicit_init_recorded_in_trace(self):
        model = helpers.t2_model()
        report = fit(model, SolveOptions(init=Theta(2.0, [0.3]), tol=1e-10))
        assert_allclose(list(report.trace)[0].theta, [2.0, 0.3])

    def test_deterministic_traces(self):
        model = helpers.one_way_model(10, 10, seed=6)
        r1 = fit(model, SolveOptions(variant="ai"))
        r2 = fit(model, SolveOptions(variant="ai"))
        for a, b in zip(r1.trace, r2.trace):
            assert np.array_equal(a.theta, b.theta)
            assert a.loglik == b.loglik and a.score_norm == b.score_norm

    def test_newton_far_start_uses_fallback_but_recovers(self):
        #观测 matrix is often indefinite far from the optimum; the per-step
        # fallback must keep the run going and the trace must say which
        # matrix produced each accepted step
        model = helpers.one_way_model(10, 20, seed=13)
        report = fit(model, SolveOptions(variant="newton", init=Theta(30.0, [20.0]),
                                         max_iter=200))
        assert report.converged
        assert_monotone(report)
        used = {rec.variant for rec in report.trace}
        assert used <= {"newton", "ai", "ai+lm", "newton+lm"}

    def test_report_uncertainty_fields(self):
        model = helpers.one_way_model(10, 10, seed=8)
        report = fit(model)
        assert report.info_kind_used == "average"
        assert report.se_theta.shape == (2,)
        assert np.all(report.se_theta >= 0)
        assert report.tau_cov.shape == (1, 1)
        assert report.u_tilde.shape == (10,)

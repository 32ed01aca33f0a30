import numpy as np
import pytest
from numpy.testing import assert_allclose

import helpers
from aireml import Theta, log_likelihood, score
from aireml import oracle
from aireml.errors import InadmissibleTheta, SizeCapExceeded

HAND_T1_AT_OPT = -0.5 * (3 * np.log(5 / 3) + np.log(4) + 3) - 1.5 * np.log(2 * np.pi)


class TestLogLikelihood:
    def test_hand_value_at_closed_form_optimum(self):
        assert_allclose(log_likelihood(helpers.t1_model(), Theta(5 / 3)),
                        HAND_T1_AT_OPT, rtol=1e-14)

    def test_closed_form_optimum_is_argmax(self):
        m = helpers.t1_model()
        best = log_likelihood(m, Theta(5 / 3))
        for s2 in (5 / 3 - 0.2, 5 / 3 - 0.05, 5 / 3 + 0.05, 5 / 3 + 0.2):
            assert log_likelihood(m, Theta(s2)) < best

    def test_coercive_in_sigma2(self):
        m = helpers.t2_model()
        values = [log_likelihood(m, Theta(s2, [0.5]))
                  for s2 in (1e-4, 1e-2, 5 / 3, 1e2, 1e4)]
        assert values[0] < values[1] < values[2]
        assert values[2] > values[3] > values[4]

    def test_inadmissible_theta(self):
        with pytest.raises(InadmissibleTheta):
            log_likelihood(helpers.t1_model(), Theta(0.0))

    def test_size_cap(self):
        with pytest.raises(SizeCapExceeded):
            log_likelihood(helpers.t1_model(), Theta(1.0), dense_cap=2)

    def test_invariant_under_observation_permutation(self):
        rng = np.random.default_rng(30)
        model, theta = helpers.random_model(rng, partitioned=True)
        base = log_likelihood(model, theta)
        perm = rng.permutation(model.n)
        from aireml import Dataset, validate
        from aireml.model import ResidualStructure, VarianceSpec
        ds = model.dataset
        part = model.spec.residual.partition
        spec = VarianceSpec(groups=model.spec.groups,
                            residual=ResidualStructure("partitioned", part[perm]),
                            scale=model.spec.scale)
        permuted = validate(Dataset(y=ds.y[perm], X=ds.X[perm], Z=ds.Z[perm]), spec)
        assert abs(log_likelihood(permuted, theta) - base) <= 1e-10 * (1 + abs(base))


class TestScore:
    def test_hand_value_away_from_optimum(self):
        assert_allclose(score(helpers.t1_model(), Theta(1.0)).s_sigma2, 1.0, rtol=1e-13)

    def test_zero_at_closed_form_optimum(self):
        assert abs(score(helpers.t1_model(), Theta(5 / 3)).s_sigma2) <= 1e-13

    def test_matches_finite_differences_small_model(self):
        m = helpers.t2_model()
        theta = Theta(1.0, [0.5])
        s = score(m, theta).as_vector()
        fd = oracle.fd_score(m, theta, h=1e-5)
        assert np.abs(s - fd).max() <= 1e-6 * (1 + np.abs(s).max())

    def test_gradient_property_on_random_instances(self):
        rng = np.random.default_rng(31)
        for k in range(20):
            scale = "log" if k % 2 else "natural"
            model, theta = helpers.random_model(rng, scale=scale)
            s = score(model, theta).as_vector()
            fd = oracle.fd_score(model, theta, h=1e-5)
            assert np.abs(s - fd).max() <= 1e-6 * (1 + np.abs(s).max())

    def test_finite_difference_error_decays_second_order(self):
        rng = np.random.default_rng(32)
        model, theta = helpers.random_model(rng, scale="log")
        s = score(model, theta).as_vector()

        def err(h):
            return np.abs(oracle.fd_score(model, theta, h=h) - s).max()

        ratio = err(4e-3) / err(1e-3)
        assert 8.0 < ratio < 32.0            # two halvings of an O(h^2) scheme

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from seqsurv import survival as sv
from oracles import make_cox_instance, oracle_concordance, oracle_grid_argmax


class TestFitCox:
    def test_two_event_binary_covariate_separates(self):
        # L(beta) = e^beta / (e^beta + 1) is monotone increasing
        with pytest.warns(UserWarning, match="separation"):
            fit = sv.fit_cox([[1.0], [0.0]], [1.0, 2.0], [1, 1], ties_method="breslow")
        assert fit.separation

    def test_four_subject_breslow_matches_grid_oracle(self):
        x = np.array([0.0, 1.0, 0.0, 1.0])
        time = np.array([1.0, 2.0, 3.0, 4.0])
        event = np.array([1, 1, 1, 0])
        fit = sv.fit_cox(x, time, event, ties_method="breslow")
        expected = oracle_grid_argmax(x, time, event, "breslow")
        assert fit.converged
        assert fit.beta[0] == pytest.approx(expected, abs=1e-3)

    @pytest.mark.parametrize("ties", ["efron", "breslow"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_instances_match_grid_oracle(self, ties, seed):
        x, time, event = make_cox_instance(seed)
        fit = sv.fit_cox(x, time, event, ties_method=ties)
        expected = oracle_grid_argmax(x, time, event, ties)
        assert fit.beta[0] == pytest.approx(expected, abs=1e-3)

    def test_constant_feature_gives_null_fit(self):
        fit = sv.fit_cox(np.ones((5, 1)), [1, 2, 3, 4, 5], [1, 1, 0, 1, 0])
        assert fit.beta[0] == 0.0
        assert fit.c_index == 0.5

    def test_loglik_path_nondecreasing(self):
        x, time, event = make_cox_instance(9)
        fit = sv.fit_cox(x, time, event)
        path = np.asarray(fit.ll_path)
        assert np.all(np.diff(path) >= -1e-12)

    def test_aic_identity(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 3))
        time = rng.exponential(5.0, size=20) + 0.1
        event = (rng.random(20) < 0.7).astype(int)
        fit = sv.fit_cox(X, time, event)
        assert fit.aic == 2.0 * 3 - 2.0 * fit.log_partial_likelihood

    def test_affine_rescaling_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(25, 2))
        time = rng.exponential(5.0, size=25) + 0.1
        event = (rng.random(25) < 0.6).astype(int)
        base = sv.fit_cox(X, time, event)
        scaled = X.copy()
        scaled[:, 1] *= 10.0
        other = sv.fit_cox(scaled, time, event)
        assert other.beta[1] == pytest.approx(base.beta[1] / 10.0, abs=1e-8)
        assert other.log_partial_likelihood == pytest.approx(base.log_partial_likelihood, abs=1e-8)
        assert other.c_index == pytest.approx(base.c_index, abs=1e-12)
        np.testing.assert_allclose(scaled @ other.beta, X @ base.beta, atol=1e-8)

    @pytest.mark.parametrize("ties", ["efron", "breslow"])
    def test_score_residuals_sum_to_score(self, ties):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(12, 2))
        time = rng.integers(1, 5, size=12).astype(float)
        event = (rng.random(12) < 0.7).astype(int)
        prob = sv._CoxProblem(X, time, event, tie_efron=ties == "efron")
        beta = np.array([0.3, -0.2])
        resid = prob.score_residuals(beta)
        score, _ = prob.score_info(beta)
        np.testing.assert_allclose(resid.sum(axis=0), score, atol=1e-10)

    def test_singleton_clusters_fall_back_to_model_covariance(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(15, 2))
        time = rng.exponential(4.0, size=15) + 0.1
        event = (rng.random(15) < 0.7).astype(int)
        plain = sv.fit_cox(X, time, event)
        clustered = sv.fit_cox(X, time, event, cluster=np.arange(15))
        np.testing.assert_allclose(clustered.covariance, plain.covariance, atol=1e-10)
        assert clustered.n_clusters == 15

    def test_sandwich_differs_with_repeated_clusters(self):
        rng = np.random.default_rng(16)
        X = rng.normal(size=(30, 2))
        time = rng.exponential(4.0, size=30) + 0.1
        event = (rng.random(30) < 0.7).astype(int)
        cluster = np.repeat(np.arange(15), 2)
        robust = sv.fit_cox(X, time, event, cluster=cluster)
        plain = sv.fit_cox(X, time, event)
        assert not np.allclose(robust.covariance, plain.covariance)
        np.testing.assert_allclose(robust.beta, plain.beta)

    def test_no_events_rejected(self):
        with pytest.raises(ValueError, match="no events"):
            sv.fit_cox([[1.0], [0.0]], [1.0, 2.0], [0, 0])

    def test_start_stop_risk_sets(self):
        # late entry: subject 0 not at risk at t=1 (enters at 2)
        X = np.array([[1.0], [0.0], [0.5]])
        fit_all = sv.fit_cox(X, [4.0, 1.0, 3.0], [1, 1, 1], start=[2.0, 0.0, 0.0])
        assert np.isfinite(fit_all.log_partial_likelihood)
        # with entry at t=2, the event at t=1 has a 2-subject risk set
        prob = sv._CoxProblem(X, [4.0, 1.0, 3.0], [1, 1, 1], start=[2.0, 0.0, 0.0])
        ll0 = prob.loglik(np.zeros(1))
        assert ll0 == pytest.approx(-(np.log(2) + np.log(2) + np.log(1)))

    def test_to_dict_schema(self):
        x, time, event = make_cox_instance(1)
        fit = sv.fit_cox(x, time, event)
        d = fit.to_dict()
        for key in ("beta", "se", "z", "p", "c_index", "aic", "log_partial_likelihood", "n", "n_events", "converged"):
            assert key in d


class TestCoxPHModel:
    def test_fit_predict_round_trip(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(30, 2))
        time = rng.exponential(4.0, size=30) + 0.1
        event = (rng.random(30) < 0.7).astype(int)
        model = sv.CoxPHModel().fit(X, np.column_stack([time, event]))
        np.testing.assert_allclose(model.predict(X), X @ model.coef_)
        assert 0.0 <= model.score(X, np.column_stack([time, event])) <= 1.0

    def test_get_params(self):
        params = sv.CoxPHModel(ties_method="breslow").get_params()
        assert params["ties_method"] == "breslow"

    def test_predict_before_fit_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            sv.CoxPHModel().predict(np.ones((2, 1)))


class TestConcordance:
    def test_perfectly_anticorrelated_risks(self):
        time = np.array([1.0, 2.0, 3.0, 4.0])
        risk = np.array([4.0, 3.0, 2.0, 1.0])
        assert sv.concordance_index(risk, time, np.ones(4, int)) == 1.0

    def test_all_tied_risks(self):
        time = np.array([1.0, 2.0, 3.0])
        assert sv.concordance_index(np.zeros(3), time, np.ones(3, int)) == 0.5

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pair_enumeration_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        risk = rng.normal(size=n)
        time = rng.integers(1, 4, size=n).astype(float)
        event = (rng.random(n) < 0.7).astype(int)
        if event.sum() == 0:
            event[0] = 1
        try:
            expected = oracle_concordance(risk, time, event)
        except ValueError:
            with pytest.raises(ValueError):
                sv.concordance_index(risk, time, event)
            return
        assert sv.concordance_index(risk, time, event) == expected

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_complement_property_without_risk_ties(self, seed):
        rng = np.random.default_rng(seed)
        n = 8
        risk = rng.permutation(n).astype(float)  # unique scores
        time = rng.integers(1, 6, size=n).astype(float)
        event = (rng.random(n) < 0.7).astype(int)
        event[0] = 1
        try:
            c1 = sv.concordance_index(risk, time, event)
        except ValueError:
            return
        c2 = sv.concordance_index(-risk, time, event)
        assert c1 + c2 == pytest.approx(1.0, abs=1e-12)

    def test_no_comparable_pairs_error(self):
        with pytest.raises(ValueError, match="comparable"):
            sv.concordance_index([1.0, 2.0], [1.0, 2.0], [0, 1])


class TestKaplanMeier:
    def test_all_censored_curve_is_flat_one(self):
        curve = sv.kaplan_meier([1.0, 2.0, 3.0], [0, 0, 0])
        assert len(curve) == 0  # no event times, S stays at 1 everywhere

    def test_hand_product_limit(self):
        curve = sv.kaplan_meier([1.0, 2.0, 3.0], [1, 0, 1])
        np.testing.assert_array_equal(curve.times, [1.0, 3.0])
        np.testing.assert_allclose(curve.survival, [2.0 / 3.0, 0.0], atol=1e-12)
        np.testing.assert_array_equal(curve.at_risk, [3, 1])

    def test_single_subject_event(self):
        curve = sv.kaplan_meier([5.0], [1])
        assert curve.survival[0] == 0.0

    def test_pooled_groups_equal_merged_sample(self):
        rng = np.random.default_rng(3)
        ta, tb = rng.exponential(5, 10), rng.exponential(3, 12)
        ea, eb = (rng.random(10) < 0.7).astype(int), (rng.random(12) < 0.7).astype(int)
        pooled = sv.kaplan_meier(np.concatenate([ta, tb]), np.concatenate([ea, eb]))
        merged = sv.kaplan_meier(np.concatenate([tb, ta]), np.concatenate([eb, ea]))
        np.testing.assert_array_equal(pooled.times, merged.times)
        np.testing.assert_allclose(pooled.survival, merged.survival, atol=1e-15)


class TestLogrank:
    def test_identical_groups(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        e = np.array([1, 1, 0, 1])
        out = sv.logrank_test(t, e, t, e)
        assert out["chi2"] == pytest.approx(0.0, abs=1e-12)
        assert out["p"] == pytest.approx(1.0, abs=1e-12)

    def test_hand_two_by_two_table(self):
        # group A events at 1, 2; group B events at 3, 4
        out = sv.logrank_test([1.0, 2.0], [1, 1], [3.0, 4.0], [1, 1])
        # O_A = 2, E_A = 1/2 + 1/3, V = 1/4 + 2/9  ->  chi2 = 49/17
        assert out["chi2"] == pytest.approx(49.0 / 17.0, abs=1e-10)
        assert out["p"] == pytest.approx(float(stats.chi2.sf(49.0 / 17.0, 1)), abs=1e-12)

    def test_p_decreases_with_separation(self):
        rng = np.random.default_rng(0)
        n = 200
        base = rng.exponential(1.0, size=n)
        pvals = []
        for ratio in [1.0, 1.5, 2.5, 4.0]:
            other = rng.exponential(1.0 / ratio, size=n)
            out = sv.logrank_test(base, np.ones(n, int), other, np.ones(n, int))
            pvals.append(out["p"])
        assert all(a >= b for a, b in zip(pvals, pvals[1:]))

    def test_no_events_error(self):
        with pytest.raises(ValueError, match="no events"):
            sv.logrank_test([1.0, 2.0], [0, 0], [3.0], [0])


class TestRiskGroups:
    def test_median_split(self):
        np.testing.assert_array_equal(sv.risk_groups([1.0, 2.0, 3.0, 4.0]), [0, 0, 1, 1])

    def test_degenerate_scores_warn(self):
        with pytest.warns(UserWarning, match="equal"):
            labels = sv.risk_groups(np.ones(5))
        assert labels.sum() == 0

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_even_split_for_unique_scores(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.permutation(118).astype(float)
        labels = sv.risk_groups(scores)
        assert abs(int(labels.sum()) - (len(scores) - int(labels.sum()))) <= 1


class TestBreslowBaseline:
    def test_null_model_matches_nelson_aalen(self):
        time = np.array([1.0, 2.0, 3.0, 4.0])
        event = np.array([1, 1, 0, 1])
        fit = sv.fit_cox(np.zeros((4, 1)) + [[1.0], [1.0], [1.0], [1.0]], time, event)
        times, increments = sv.breslow_baseline(fit, np.ones((4, 1)), time, event)
        np.testing.assert_array_equal(times, [1.0, 2.0, 4.0])
        np.testing.assert_allclose(increments, [1 / 4, 1 / 3, 1 / 1])

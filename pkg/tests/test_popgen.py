import numpy as np
import pytest
from scipy.special import logit

from drcombine import draw_outcomes, generate_population, scenario
from drcombine.errors import ConfigurationError
from drcombine.popgen import dump_population, load_population


def test_mean_cluster_size_near_600(pop1):
    assert pop1.J == 1000
    assert abs(pop1.cluster_sizes.mean() / 600 - 1) < 0.03


def test_household_count_moments(pop1):
    H = pop1.households_by_size.astype(float)
    assert abs(H.mean() - 100) < 5
    assert abs(H.var(ddof=1) - 400) < 60


def test_poisson_limit_still_generates():
    pop = generate_population(scenario(1, J=50, M=10, household_var=100.0))
    H = pop.households_by_size
    # Poisson: variance close to the mean
    assert abs(H.var() / H.mean() - 1) < 0.35
    assert pop.n == pop.cluster_sizes.sum()


def test_zero_household_clusters_are_redrawn():
    spec = scenario(1, J=400, M=10, n_house=1, household_mean=0.3, household_var=0.3)
    pop = generate_population(spec)
    assert (pop.size_measure > 0).all()
    assert (pop.cluster_sizes > 0).all()


def test_formulas_at_origin(pop1):
    zero = np.zeros((1, 4))
    assert pop1.mean_function(zero)[0] == 0.0
    assert pop1.selection_linear_predictor(zero)[0] == pytest.approx(-6.2, abs=1e-12)


def test_stored_selection_prob_matches_formula(pop1):
    np.testing.assert_allclose(pop1.selection_prob(pop1.X), pop1.true_sel_prob, rtol=0, atol=1e-12)
    np.testing.assert_allclose(pop1.mean_function(pop1.X), pop1.true_mean, rtol=0, atol=1e-12)


def test_individual_invariants(pop1):
    assert set(np.unique(pop1.X[:, 2])) <= {0.0, 1.0}
    assert set(np.unique(pop1.X[:, 3])) <= {0.0, 1.0}
    assert set(np.unique(pop1.household_size)) == {1, 2, 3}
    assert ((pop1.true_sel_prob > 0) & (pop1.true_sel_prob < 1)).all()
    H = pop1.households_by_size
    np.testing.assert_array_equal(pop1.cluster_sizes, H @ np.array([1, 2, 3]))
    np.testing.assert_array_equal(pop1.size_measure, H.sum(axis=1))
    # contiguous labelling by cluster
    assert (np.diff(pop1.cluster_id) >= 0).all()
    np.testing.assert_array_equal(pop1.member_start[1:], pop1.member_stop[:-1])


def test_arrays_are_read_only(pop1):
    with pytest.raises(ValueError):
        pop1.X[0, 0] = 1.0


def test_zero_variance_outcomes_equal_m0(pop1):
    Y, Ybar = draw_outcomes(pop1, 1, sd=0.0)
    np.testing.assert_array_equal(Y, pop1.true_mean)
    assert Ybar == pytest.approx(pop1.true_mean.mean(), abs=1e-12)


def test_outcomes_deterministic_and_population_untouched(pop1):
    before = pop1.X.copy(), pop1.true_mean.copy()
    Y1, _ = draw_outcomes(pop1, 99)
    Y2, _ = draw_outcomes(pop1, 99)
    Y3, _ = draw_outcomes(pop1, 100)
    np.testing.assert_array_equal(Y1, Y2)
    assert not np.array_equal(Y1, Y3)
    np.testing.assert_array_equal(before[0], pop1.X)
    np.testing.assert_array_equal(before[1], pop1.true_mean)


def test_mean_of_ybar_tracks_population_m0(pop1):
    means = np.array([draw_outcomes(pop1, s)[1] for s in range(50)])
    mc_se = 1.0 / np.sqrt(pop1.n) / np.sqrt(50)
    assert abs(means.mean() - pop1.true_mean.mean()) < 4 * mc_se


def test_population_fixed_by_seed():
    a = generate_population(scenario(1, J=30, M=5))
    b = generate_population(scenario(1, J=30, M=5))
    np.testing.assert_array_equal(a.X, b.X)


def test_target_b_size_solves_intercept():
    pop = generate_population(scenario(1, J=100, M=10, target_b_size=500.0))
    assert pop.true_sel_prob.sum() == pytest.approx(500.0, rel=1e-8)


@pytest.mark.parametrize(
    "bad",
    [dict(m0_formula={"Z1": 1.0}), dict(piB_formula={"X9": 1.0}), dict(M=0), dict(delta=1.5), dict(K=0)],
)
def test_invalid_configuration(bad):
    with pytest.raises(ConfigurationError):
        scenario(1, **bad)


def test_unknown_scenario():
    with pytest.raises(ConfigurationError):
        scenario(7)


def test_dump_load_roundtrip(tmp_path):
    pop = generate_population(scenario(3, J=8, M=2, n_house=2))
    path = tmp_path / "pop.csv"
    dump_population(pop, path)
    back = load_population(path, pop.spec)
    np.testing.assert_array_equal(back.X, pop.X)
    np.testing.assert_array_equal(back.households_by_size, pop.households_by_size)
    np.testing.assert_array_equal(back.household_id, pop.household_id)
    np.testing.assert_array_equal(back.true_sel_prob, pop.true_sel_prob)
    assert back.alpha_int == pytest.approx(pop.alpha_int, abs=1e-9)
    np.testing.assert_allclose(logit(back.true_sel_prob), back.selection_linear_predictor(), atol=1e-9)

import numpy as np
import pytest
from scipy.special import expit

from drcombine import generate_population, scenario
from drcombine.selection import draw_sample_b, solve_alpha_int


def test_degenerate_probability_one(small_pop, rng):
    assert draw_sample_b(small_pop, rng, piB=1.0).all()


@pytest.mark.parametrize("sid", [1, 2])
def test_sample_b_size(sid):
    pop = generate_population(scenario(sid))
    p = pop.true_sel_prob
    sizes = [draw_sample_b(pop, np.random.default_rng(s)).sum() for s in range(3)]
    sd = np.sqrt(np.sum(p * (1 - p)))
    assert all(abs(n - p.sum()) < 4 * sd for n in sizes)


def test_reference_sizes(pop1):
    # expected Sample B sizes close to the reference values 7000 / 2000
    assert abs(pop1.true_sel_prob.sum() / 7000 - 1) < 0.05
    pop2 = generate_population(scenario(2))
    assert abs(pop2.true_sel_prob.sum() / 2000 - 1) < 0.05


def test_selection_rate_by_covariate_bin(small_pop):
    p = small_pop.true_sel_prob
    bins = np.digitize(small_pop.X[:, 1], np.quantile(small_pop.X[:, 1], [0.25, 0.5, 0.75]))
    reps = 200
    hits = np.zeros(small_pop.n)
    for s in range(reps):
        hits += draw_sample_b(small_pop, np.random.default_rng(s))
    for b in range(4):
        m = bins == b
        expected = p[m].mean()
        observed = hits[m].sum() / (reps * m.sum())
        sd = np.sqrt(np.sum(p[m] * (1 - p[m])) * reps) / (reps * m.sum())
        assert abs(observed - expected) < 3 * sd


def test_alpha_solver_inverts_size():
    eta = np.random.default_rng(0).normal(size=5000)
    a = solve_alpha_int(eta, 250.0)
    assert expit(a + eta).sum() == pytest.approx(250.0, rel=1e-9)

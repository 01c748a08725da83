import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from tobitbo.benchmarks import (FUNCTIONS, CensoringScheme, SimulatedTarget, apply_censoring, censor_values,
                                censored_1d, eval_fn, generate_dataset, get_function, run_target)

MINIMIZERS = {
    "branin": ([math.pi, 2.275], 0.397887, 1e-5),
    "camelback": ([0.0898, -0.7126], -1.0316, 1e-4),
    "hartmann3": ([0.114614, 0.555649, 0.852547], -3.86278, 1e-4),
    "hartmann6": ([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573], -3.32237, 1e-4),
}


class TestFunctions:
    @pytest.mark.parametrize("name", sorted(MINIMIZERS))
    def test_known_minimum(self, name):
        x, f, tol = MINIMIZERS[name]
        assert eval_fn(get_function(name), x) == pytest.approx(f, abs=tol)

    @pytest.mark.parametrize("name", sorted(FUNCTIONS))
    def test_stored_minimum_is_a_lower_bound(self, name):
        fn = get_function(name)
        vals = fn.evaluate_many(fn.sample(np.random.default_rng(0), 2000))
        assert vals.min() >= fn.f_min - 1e-9
        assert vals.max() <= fn.f_max + 1e-9

    def test_branin_other_minimizers(self):
        fn = get_function("branin")
        for x in ([-math.pi, 12.275], [9.42478, 2.475]):
            assert fn(x) == pytest.approx(0.397887, abs=1e-5)

    @given(st.floats(-3, 3), st.floats(-2, 2))
    def test_camelback_symmetry(self, a, b):
        fn = get_function("camel")
        assert fn([a, b]) == pytest.approx(fn([-a, -b]), rel=1e-12, abs=1e-12)

    def test_out_of_box(self):
        with pytest.raises(ValueError):
            get_function("branin")([11.0, 0.0])
        with pytest.raises(ValueError):
            get_function("hart3")([0.5, 0.5])

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            get_function("rosenbrock")


class TestDataset:
    def test_sizes(self):
        ds = generate_dataset(get_function("branin"), 0)
        assert len(ds) == 2000
        assert len(np.unique(ds.location)) == 200
        assert np.all(np.bincount(ds.location) == 10)

    def test_noise_scale(self):
        ds = generate_dataset(get_function("hartmann3"), 1)
        f = ds.true_y[::10]
        assert ds.noise_std == pytest.approx(0.1 * (f.max() - f.min()), abs=1e-12)

    def test_replicates_share_location(self):
        ds = generate_dataset(get_function("camelback"), 2)
        for loc in (0, 57):
            rows = ds.location == loc
            assert len(np.unique(ds.X[rows], axis=0)) == 1

    def test_reproducible(self):
        a = generate_dataset(get_function("hartmann6"), 3)
        b = generate_dataset(get_function("hartmann6"), 3)
        np.testing.assert_array_equal(a.noisy_y, b.noisy_y)
        np.testing.assert_array_equal(a.X, b.X)


class TestCensoring:
    def test_fraction_nonincreasing_in_percentile(self):
        for name in ("branin", "hartmann3"):
            ds = generate_dataset(get_function(name), 0)
            fr = [censor_values(ds.noisy_y, CensoringScheme("random_ramp", p))[1].mean() for p in (10, 20, 40, 80)]
            assert all(a >= b for a, b in zip(fr, fr[1:]))
            assert fr[3] < fr[1]

    def test_censored_rows_between_threshold_and_value(self):
        ds = generate_dataset(get_function("branin"), 0)
        v = ds.noisy_y
        obs, c, cut = censor_values(v, CensoringScheme("random_ramp", 20, seed=4))
        gamma = np.percentile(v, 20)
        assert c.any()
        assert np.all(obs[c] <= v[c])
        assert np.all(obs[c] >= gamma)
        assert np.all(v[c] > gamma)
        np.testing.assert_array_equal(obs[~c], v[~c])
        np.testing.assert_array_equal(cut[c], obs[c])

    def test_fixed_above_max(self):
        v = np.arange(10.0)
        _, c, _ = censor_values(v, CensoringScheme("fixed", None, 100.0))
        assert not c.any()

    def test_fixed(self):
        obs, c, _ = censor_values(np.arange(10.0), CensoringScheme("fixed", None, 4.5))
        np.testing.assert_array_equal(c, np.arange(10) > 4.5)
        assert np.all(obs[c] == 4.5)

    def test_degenerate_values(self):
        _, c, _ = censor_values(np.ones(20), CensoringScheme("random_ramp", 50))
        assert not c.any()

    def test_observations_respect_invariant(self):
        ds = generate_dataset(get_function("camelback"), 0)
        obs = apply_censoring(ds, CensoringScheme("random_ramp", 10))
        assert len(obs) == len(ds)
        assert any(o.censored for o in obs)

    def test_bad_scheme(self):
        with pytest.raises(ValueError):
            CensoringScheme("fixed", None, None)
        with pytest.raises(ValueError):
            CensoringScheme("sometimes")

    def test_1d_problem(self):
        d = censored_1d(0)
        assert d.X.shape == (200, 1)
        assert 0.1 < d.censored.mean() < 0.6
        assert np.all(np.diff(d.X[:, 0]) >= 0)


class TestSimulator:
    t = SimulatedTarget(get_function("branin"))

    def test_median_range(self):
        fn = self.t.fn
        assert self.t.median_cost(MINIMIZERS["branin"][0]) == pytest.approx(1.0, abs=1e-4)
        assert self.t.median_cost([-5.0, 0.0]) == pytest.approx(100.0, rel=1e-9)
        assert fn([-5.0, 0.0]) == pytest.approx(fn.f_max)

    def test_uncapped_never_censored(self):
        for s in range(50):
            assert not run_target(self.t, [1.0, 1.0], math.inf, s).censored

    def test_tiny_cap_always_censored(self):
        x = [1.0, 1.0]
        kappa = self.t.t_min / 10
        # P(cost < t_min / 10) under the log-normal with median >= t_min
        assert norm.cdf(math.log(kappa / self.t.median_cost(x)) / self.t.s) < 1e-6
        for s in range(50):
            o = run_target(self.t, x, kappa, s)
            assert o.censored and o.y == kappa

    def test_sample_median(self):
        x = [2.0, 7.0]
        costs = np.array([self.t.sample_cost(x, s) for s in range(10_000)])
        assert np.median(costs) == pytest.approx(self.t.median_cost(x), rel=0.05)
        assert np.all(costs > 0)

    def test_deterministic_per_seed(self):
        assert run_target(self.t, [0.0, 1.0], 50.0, 7) == run_target(self.t, [0.0, 1.0], 50.0, 7)

    def test_rejects_bad_cap(self):
        with pytest.raises(ValueError):
            run_target(self.t, [0.0, 1.0], 0.0, 0)

    @settings(max_examples=50)
    @given(st.floats(0.5, 200), st.integers(0, 2 ** 32 - 1))
    def test_capping(self, kappa, seed):
        o = run_target(self.t, [0.0, 5.0], kappa, seed)
        assert o.y <= kappa and o.cutoff == kappa

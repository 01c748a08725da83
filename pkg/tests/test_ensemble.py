import numpy as np
import pytest

from tobitbo.benchmarks import censored_1d
from tobitbo.ensemble import Ensemble, train_ensemble
from tobitbo.nn import Mlp, Normalizer, TrainConfig, TrainingError, init_mlp
from tobitbo.observations import TrainingData


def constant_net(value, dim=1, raw_var=0.0):
    net = init_mlp(dim, 0, hidden=(3,))
    for w in net.weights:
        w[...] = 0.0
    for b in net.biases:
        b[...] = 0.0
    net.biases[-1][:] = [value, raw_var]
    return net


IDENTITY = Normalizer(np.zeros(1), np.ones(1), 0.0, 1.0)


class TestPredict:
    def test_three_member_mean_and_variance(self):
        ens = Ensemble([constant_net(v) for v in (1.0, 2.0, 3.0)], IDENTITY)
        mu, var = ens.predict(np.array([0.5]))
        assert abs(mu - 2.0) < 1e-12
        assert abs(var - 2.0 / 3.0) < 1e-12

    def test_single_member_has_zero_variance(self):
        ens = Ensemble([constant_net(4.0)], IDENTITY)
        mu, var = ens.predict(np.array([0.1]))
        assert mu == 4.0 and var == 0.0

    def test_aleatoric_heads_excluded(self):
        a = Ensemble([constant_net(v, raw_var=r) for v, r in ((1.0, -5.0), (3.0, 5.0))], IDENTITY)
        b = Ensemble([constant_net(v, raw_var=0.0) for v in (1.0, 3.0)], IDENTITY)
        assert a.predict(np.array([0.2])) == b.predict(np.array([0.2]))

    def test_denormalizes(self):
        norm = Normalizer(np.zeros(1), np.ones(1), 10.0, 2.0)
        ens = Ensemble([constant_net(v) for v in (1.0, 2.0, 3.0)], norm)
        mu, var = ens.predict(np.array([0.5]))
        assert mu == pytest.approx(14.0, abs=1e-12)
        assert var == pytest.approx(4 * 2 / 3, abs=1e-12)

    def test_batch_shape(self):
        ens = Ensemble([constant_net(v) for v in (1.0, 2.0)], IDENTITY)
        mu, var = ens.predict(np.zeros((4, 1)))
        assert mu.shape == var.shape == (4,)

    def test_member_prediction(self):
        ens = Ensemble([constant_net(v) for v in (1.0, 2.0)], IDENTITY)
        mu, s2 = ens.predict_member(1, np.array([0.3]))
        assert mu == 2.0 and s2 == pytest.approx(np.log(2.0))
        with pytest.raises(IndexError):
            ens.predict_member(2, np.array([0.3]))

    def test_dimension_mismatch(self):
        ens = Ensemble([constant_net(1.0)], IDENTITY)
        with pytest.raises(ValueError):
            ens.predict(np.zeros(2))

    def test_empty(self):
        with pytest.raises(ValueError):
            Ensemble([], IDENTITY)


class TestTrain:
    def test_members_differ_and_are_seeded(self):
        data = censored_1d(0)
        cfg = TrainConfig(epochs=20)
        ens = train_ensemble(data, 5, cfg, base_seed=10)
        assert [m.seed for m in ens.members] == [10, 11, 12, 13, 14]
        flats = [m.flat() for m in ens.members]
        for i in range(5):
            for j in range(i + 1, 5):
                assert not np.array_equal(flats[i], flats[j])
        again = train_ensemble(data, 5, cfg, base_seed=10)
        for a, b in zip(ens.members, again.members):
            np.testing.assert_array_equal(a.flat(), b.flat())

    def test_epistemic_spread_positive(self):
        data = censored_1d(1)
        ens = train_ensemble(data, 3, TrainConfig(epochs=30), loss_kind="gaussian_nll")
        _, var = ens.predict(np.linspace(-3, 3, 5)[:, None])
        assert np.all(var > 0)

    def test_rejects_zero_members(self):
        with pytest.raises(ValueError):
            train_ensemble(censored_1d(0), 0)

    def test_divergence_names_member(self):
        d = censored_1d(0)
        norm = Normalizer(np.array([-3.0]), np.array([3.0]), 0.0, 1e-300)
        with np.errstate(all="ignore"), pytest.raises(TrainingError) as exc:
            train_ensemble(d, 2, TrainConfig(epochs=1), normalizer=norm)
        assert exc.value.member is not None
        assert "member" in str(exc.value)

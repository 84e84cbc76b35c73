import numpy as np
import pytest

from hullforge.net import Architecture, TrainConfig, TrainingDiverged, train

ARCH = Architecture(patch_size=8, channels=(2, 2), latent_dim=4)


def _pairs(n=16, seed=0):
    rng = np.random.default_rng(seed)
    x = (rng.random((n, 8, 8, 8)) > 0.5).astype(np.float32)
    return x, x.copy()


def test_identity_learning_reduces_loss():
    _, losses = train(_pairs(), TrainConfig(epochs=10, batch_size=4, arch=ARCH))
    assert losses[-1] < losses[0]


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3, arch=ARCH)
    m1, l1 = train(_pairs(), cfg)
    m2, l2 = train(_pairs(), cfg)
    assert l1 == l2
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


def test_callback_sees_every_epoch():
    seen = []
    train(_pairs(4), TrainConfig(epochs=3, batch_size=2, arch=ARCH), lambda e, l, m: seen.append(e))
    assert seen == [0, 1, 2]


def test_list_of_pairs_accepted():
    x, y = _pairs(4)
    _, losses = train(list(zip(x, y)), TrainConfig(epochs=1, arch=ARCH))
    assert len(losses) == 1


def test_empty_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        train([], TrainConfig(epochs=1, arch=ARCH))


def test_nan_input_diverges():
    x, y = _pairs(4)
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train((x, y), TrainConfig(epochs=1, arch=ARCH))


def test_patch_size_mismatch_rejected():
    x = np.zeros((2, 16, 16, 16), np.float32)
    with pytest.raises(ValueError, match="architecture"):
        train((x, x), TrainConfig(epochs=1, arch=ARCH))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(rho=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)

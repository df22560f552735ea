import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridgekit.exceptions import ConfigError, NumericError, ShapeError
from bridgekit.net import Architecture, RegressorParams
from bridgekit.problems import IdentitySource, ToyCoupling
from bridgekit.train import (
    TrainConfig,
    draw_times,
    learning_rate_at,
    loss,
    resume,
    train,
    training_batch,
    write_loss_log,
)


def tiny(source, out_dim=None, seed=0):
    arch = Architecture(state_dim=source.state_dim, out_dim=out_dim or source.state_dim, hidden=16, depth=2,
                        embed_dim=8)
    return RegressorParams.initialize(arch, np.random.default_rng(seed))


def test_loss_examples():
    assert loss(np.array([1.0]), np.array([0.0])) == 1.0
    x = np.array([0.3, -2.0, 5.0])
    assert loss(x, x) == 0.0
    with pytest.raises(ShapeError):
        loss(np.zeros(2), np.zeros(3))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8), st.randoms())
def test_loss_permutation_invariant(values, r):
    pred = np.array(values)
    target = pred[::-1] + 1.0
    perm = list(range(len(values)))
    r.shuffle(perm)
    assert loss(pred[perm], target[perm]) == pytest.approx(loss(pred, target), rel=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(train_grid=1)
    with pytest.raises(ConfigError):
        TrainConfig(objective="endpoint-with-score", mode="ode")
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="step")
    with pytest.raises(ConfigError, match="velocity"):
        TrainConfig(objective="velocity")


def test_draw_times_grid(rng):
    t = draw_times(1000, rng, train_grid=500)
    assert np.all(t > 0) and np.all(t <= 1)
    assert np.allclose(t * 500, np.round(t * 500))
    u = draw_times(1000, rng)
    assert np.all((u >= 0) & (u < 1))


def test_cosine_learning_rate():
    cfg = TrainConfig(steps=101, learning_rate=0.2, lr_schedule="cosine")
    assert learning_rate_at(cfg, 1) == 0.2
    assert learning_rate_at(cfg, 51) == pytest.approx(0.1)
    assert learning_rate_at(cfg, 101) == pytest.approx(0.0, abs=1e-17)
    assert learning_rate_at(TrainConfig(learning_rate=0.2), 77) == 0.2


def test_ode_mode_batch_is_posterior_mean(rng):
    cfg = TrainConfig(batch_size=6, mode="ode", schedule={"kind": "sb-constant", "beta0": 1.0})
    y_t, _, t, target, (x0, y1) = training_batch(cfg, cfg.noise_schedule, ToyCoupling(), rng)
    assert np.allclose(y_t, (1 - t)[:, None] * x0 + t[:, None] * y1, atol=1e-14)
    assert np.array_equal(target, x0)


def test_identity_data_smoke():
    src = IdentitySource()
    cfg = TrainConfig(steps=500, batch_size=64, learning_rate=3e-3, mode="ode", seed=0)
    res = train(cfg, src, tiny(src))
    assert np.mean(res.losses[-20:]) < 1e-4
    assert res.losses[-1] < res.losses[0]


def test_zero_learning_rate_keeps_parameters():
    src = ToyCoupling()
    p = tiny(src)
    before = p.flat.copy()
    train(TrainConfig(steps=25, batch_size=8, learning_rate=0.0), src, p)
    assert np.array_equal(p.flat, before)


def test_fixed_seed_bit_identical_history():
    src = ToyCoupling()
    runs = [train(TrainConfig(steps=30, batch_size=16, seed=3), src, tiny(src)) for _ in range(2)]
    assert runs[0].losses == runs[1].losses
    assert np.array_equal(runs[0].params.flat, runs[1].params.flat)


def test_resume_is_bit_exact(tmp_path):
    src = ToyCoupling()
    full = train(TrainConfig(steps=40, batch_size=16, seed=1), src, tiny(src))
    ck = tmp_path / "ck.sbmk"
    first = train(TrainConfig(steps=25, batch_size=16, seed=1, checkpoint_every=25, checkpoint_path=str(ck)),
                  src, tiny(src))
    rest = resume(TrainConfig(steps=40, batch_size=16, seed=1), src, ck)
    assert first.losses + rest.losses == full.losses
    assert np.array_equal(rest.params.flat, full.params.flat)


def test_width_mismatch_rejected():
    src = ToyCoupling()
    with pytest.raises(ShapeError):
        train(TrainConfig(steps=1, objective="endpoint-with-score"), src, tiny(src))


class HugeSource(ToyCoupling):
    """Finite endpoints whose squared error overflows."""

    def sample(self, n, rng):
        x0, y1, c = super().sample(n, rng)
        return 1e200 * x0, y1, c


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_non_finite_loss_reports_step_and_hash():
    src = HugeSource()
    with pytest.raises(NumericError, match=r"step 1 \(inputs hash [0-9a-f]{16}\)"):
        train(TrainConfig(steps=3, batch_size=4), src, tiny(src))


def test_non_finite_activation_names_layer():
    src = ToyCoupling()
    p = tiny(src)
    p.tensors["out.b"][0] = np.inf
    with pytest.raises(NumericError, match="output layer"):
        train(TrainConfig(steps=3, batch_size=4), src, p)


def test_loss_log(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_log(path, [0.5, 0.25], start_step=10)
    assert path.read_text() == "step,loss\n11,0.5\n12,0.25\n"

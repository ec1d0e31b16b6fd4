import math

import numpy as np
import numpy.testing as npt
import pytest

from compnet.config import parse_config
from compnet.optim import (
    AdaDeltaState,
    TrainConfig,
    adadelta_step,
    evaluate,
    train,
    write_history_csv,
)
from compnet.tensor import ShapeError

TOY_CONFIG = """\
compconv features=2 kernel=4x4 components=1x1
relu
fc units=2
softmax
"""


def toy_net(seed=1):
    return parse_config(TOY_CONFIG).build((1, 6, 6), seed=seed)


def quadrant_data(rng, n):
    """Class 0 lights the top-left quadrant, class 1 the bottom-right."""
    x = rng.normal(0.0, 0.05, size=(n, 1, 6, 6))
    y = np.arange(n) % 2
    x[y == 0, 0, 0:3, 0:3] += 1.0
    x[y == 1, 0, 3:6, 3:6] += 1.0
    return x, y


# ----------------------------------------------------------------- adadelta


def test_zero_grad_zero_state_leaves_params_unchanged():
    p = np.array([1.0, -2.0, 3.0])
    adadelta_step({"p": p}, {"p": np.zeros(3)}, AdaDeltaState())
    npt.assert_array_equal(p, [1.0, -2.0, 3.0])


def test_zero_grad_applies_pure_momentum():
    p = np.zeros(2)
    state = AdaDeltaState()
    u = np.array([0.5, -1.0])
    state.acc_grad["p"] = np.zeros(2)
    state.acc_update["p"] = np.zeros(2)
    state.prev_update["p"] = u.copy()
    adadelta_step({"p": p}, {"p": np.zeros(2)}, state)
    npt.assert_allclose(p, 0.8 * u)
    # and the momentum buffer decays geometrically on further empty steps
    adadelta_step({"p": p}, {"p": np.zeros(2)}, state)
    npt.assert_allclose(p, 0.8 * u + 0.64 * u)


def test_first_step_matches_hand_formula():
    rho, eps = 0.95, 1e-6
    g = np.array([0.3, -0.7, 2.0])
    p = np.zeros(3)
    adadelta_step({"p": p}, {"p": g.copy()}, AdaDeltaState())
    expected = -(np.sqrt(eps) / np.sqrt((1 - rho) * g * g + eps)) * g
    npt.assert_allclose(p, expected, rtol=0, atol=1e-15)


def test_three_steps_match_scalar_transcription():
    # the update rule evaluated one scalar at a time, straight from its
    # definition, against the vectorized in-place implementation
    rho, eps, mom = 0.95, 1e-6, 0.8
    gs = [0.4, -1.1, 0.25]
    ag = au = pu = 0.0
    p_ref = 1.5
    for g in gs:
        ag = rho * ag + (1 - rho) * g * g
        delta = -math.sqrt(au + eps) / math.sqrt(ag + eps) * g
        au = rho * au + (1 - rho) * delta * delta
        step = mom * pu + delta
        p_ref += step
        pu = step

    p = np.array([1.5])
    state = AdaDeltaState()
    for g in gs:
        adadelta_step({"p": p}, {"p": np.array([g])}, state)
    npt.assert_allclose(p[0], p_ref, rtol=1e-15)


def test_accumulators_stay_nonnegative():
    rng = np.random.default_rng(5)
    p = rng.normal(size=(3, 4))
    state = AdaDeltaState()
    for _ in range(20):
        adadelta_step({"p": p}, {"p": rng.normal(size=(3, 4))}, state)
    assert (state.acc_grad["p"] >= 0).all()
    assert (state.acc_update["p"] >= 0).all()


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        adadelta_step({"p": np.zeros(3)}, {"p": np.zeros(4)}, AdaDeltaState())


def test_step_sequence_is_deterministic():
    rng = np.random.default_rng(11)
    grads = [rng.normal(size=5) for _ in range(10)]
    outs = []
    for _ in range(2):
        p = np.ones(5)
        state = AdaDeltaState()
        for g in grads:
            adadelta_step({"p": p}, {"p": g.copy()}, state)
        outs.append(p.copy())
    npt.assert_array_equal(outs[0], outs[1])


# -------------------------------------------------------------------- train


def test_toy_two_class_reaches_99_percent():
    rng = np.random.default_rng(0)
    x, y = quadrant_data(rng, 40)
    net = toy_net()
    cfg = TrainConfig(batch_size=20, iterations=200, seed=0, eval_interval=50)
    train(net, x, y, cfg, x, y)
    _, acc = evaluate(net, x, y)
    assert acc >= 0.99


def test_frozen_params_keep_loss_at_chance():
    rng = np.random.default_rng(2)
    x = rng.normal(0.0, 0.1, size=(60, 1, 6, 6))
    y = rng.integers(0, 2, size=60)
    net = toy_net(seed=3)
    cfg = TrainConfig(batch_size=20, iterations=50, seed=2, eval_interval=25,
                      freeze_params=True)
    history = train(net, x, y, cfg)
    losses = np.array([r.train_loss for r in history])
    assert np.abs(losses - math.log(2)).max() < 0.2
    # no drift: early and late batches sit at the same level
    assert abs(losses[:10].mean() - losses[-10:].mean()) < 0.05


def test_fixed_seed_gives_bit_identical_history(tmp_path):
    rng = np.random.default_rng(4)
    x, y = quadrant_data(rng, 30)
    paths = []
    for run in range(2):
        net = toy_net(seed=9)
        cfg = TrainConfig(batch_size=10, iterations=40, seed=5, eval_interval=10)
        history = train(net, x, y, cfg, x, y)
        p = tmp_path / f"history{run}.csv"
        write_history_csv(history, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_training_respects_bank_constraints():
    rng = np.random.default_rng(6)
    x, y = quadrant_data(rng, 30)
    net = toy_net(seed=7)
    cfg = TrainConfig(batch_size=10, iterations=60, seed=6, eval_interval=20)
    train(net, x, y, cfg)
    net.validate_banks()  # raises on any violated invariant
    for layer in net.comp_layers():
        assert (layer.bank.sigma > 0.5).all()


def test_history_rows_and_eval_interval():
    rng = np.random.default_rng(8)
    x, y = quadrant_data(rng, 20)
    net = toy_net(seed=8)
    cfg = TrainConfig(batch_size=10, iterations=25, seed=8, eval_interval=10)
    history = train(net, x, y, cfg, x, y)
    assert [r.iteration for r in history] == list(range(1, 26))
    evaled = [r.iteration for r in history if r.test_loss is not None]
    assert evaled == [10, 20, 25]  # interval points plus the final iteration
    assert all(r.test_accuracy is None for r in history if r.iteration == 5)


def test_history_csv_round_trips_floats(tmp_path):
    rng = np.random.default_rng(9)
    x, y = quadrant_data(rng, 20)
    net = toy_net(seed=10)
    cfg = TrainConfig(batch_size=10, iterations=12, seed=9, eval_interval=6)
    history = train(net, x, y, cfg, x, y)
    path = tmp_path / "h.csv"
    write_history_csv(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,train_loss,test_loss,test_accuracy"
    assert len(lines) == 13
    for row, line in zip(history, lines[1:]):
        fields = line.split(",")
        assert int(fields[0]) == row.iteration
        assert float(fields[1]) == row.train_loss  # %.17g is lossless
        if row.test_loss is None:
            assert fields[2] == "" and fields[3] == ""
        else:
            assert float(fields[2]) == row.test_loss


def test_evaluate_is_chunk_invariant():
    rng = np.random.default_rng(10)
    x, y = quadrant_data(rng, 23)
    net = toy_net(seed=11)
    assert evaluate(net, x, y, chunk=4) == evaluate(net, x, y, chunk=500)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)

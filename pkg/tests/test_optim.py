import numpy as np
import pytest

import gradcheck as gc
from windpost.data import generate_synthetic, split_folds
from windpost.errors import ConfigurationError, TrainingDivergence
from windpost.optim import (
    OptimizerState,
    TrainConfig,
    batch_noise,
    final_epoch_rule,
    loss_and_grad,
    optimizer_step,
    pretrain_components,
    train,
)
from windpost.param_models import (
    ALPHA_RANGE,
    BETA_RANGE,
    DENSE_FAMILIES,
    LINEAR_FAMILIES,
    DenseConfig,
    DenseModel,
    LinearModel,
    l2_penalty,
)
from windpost.scoring import PRESETS
from windpost.verification import mean_scores


def cfg_factory(weight, n):
    return TrainConfig(weight, n_samples=n)


# --- optimizer


def test_sgd_step():
    p = {"t": np.array([1.0])}
    optimizer_step(OptimizerState("sgd"), p, {"t": np.array([2.0])}, 0.1)
    assert p["t"][0] == pytest.approx(0.8, abs=1e-15)


@pytest.mark.parametrize("g", [1e-3, 0.5, 7.0])
def test_adam_first_step_is_lr(g):
    p = {"t": np.array([1.0])}
    state = OptimizerState("adam")
    optimizer_step(state, p, {"t": np.array([g])}, 0.01)
    assert 1.0 - p["t"][0] == pytest.approx(0.01, rel=1e-5)
    assert state.step == 1 and state.m["t"].shape == (1,)


@pytest.mark.parametrize("kind", ["adam", "sgd"])
def test_zero_gradient_leaves_params(kind):
    p = {"t": np.array([1.5, -2.0])}
    state = OptimizerState(kind)
    for _ in range(3):
        optimizer_step(state, p, {"t": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(p["t"], [1.5, -2.0])


# --- gradients


def test_linear_tn_crps_gradient_plain_central_differences():
    rng = np.random.default_rng(42)
    m = LinearModel("tn")
    X, x_w, y, noise = gc.random_point(m, rng, n_records=16, n_samples=50)
    _, grads = loss_and_grad(m, X, x_w, y, TrainConfig("constant", n_samples=50), noise)
    coords = gc.coordinates(m.params, rng)
    f = gc.frozen_objective(m, m.params, X, x_w, y, PRESETS["constant"], noise)
    fd = gc.finite_difference(f, m.params, coords, h=1e-5, richardson=False)
    g = np.array([grads[k][i] for k, i in coords])
    assert np.all(np.abs(g - fd) <= np.maximum(1e-4 * np.abs(fd), 1e-7))


@pytest.mark.parametrize("weight", gc.WEIGHTS)
@pytest.mark.parametrize("family", LINEAR_FAMILIES)
def test_gradient_contract_linear(family, weight):
    rng = np.random.default_rng([1, LINEAR_FAMILIES.index(family), gc.WEIGHTS.index(weight)])
    for _ in range(3):
        assert gc.check_point(LinearModel(family), PRESETS[weight], rng, cfg_factory, limit=12) <= 1.0


@pytest.mark.parametrize("weight", gc.WEIGHTS)
@pytest.mark.parametrize("family", DENSE_FAMILIES)
def test_gradient_contract_dense(family, weight):
    rng = np.random.default_rng([2, DENSE_FAMILIES.index(family), gc.WEIGHTS.index(weight)])
    for _ in range(3):
        model = DenseModel(family, DenseConfig(2, 20, 0.01), seed=int(rng.integers(1000)))
        assert gc.check_point(model, PRESETS[weight], rng, cfg_factory, limit=12) <= 1.0


@pytest.mark.parametrize("family", ["tn", "mix_tn_gev"])
def test_identical_records_batch(family):
    rng = np.random.default_rng(3)
    m = LinearModel(family)
    X, x_w, y, noise = gc.random_point(m, rng, n_records=1)
    cfg = TrainConfig("sigmoid", n_samples=noise.shape[1] // 2)
    l1, g1 = loss_and_grad(m, X, x_w, y, cfg, noise)
    rep = lambda a: np.repeat(a, 5, axis=0)  # noqa: E731
    l5, g5 = loss_and_grad(m, rep(X), rep(x_w), rep(y), cfg, rep(noise))
    assert l5 == pytest.approx(l1, rel=1e-14)
    for k in g1:
        np.testing.assert_allclose(g5[k], g1[k], rtol=1e-12, atol=1e-15)


def test_l2_changes_loss_by_penalty():
    rng = np.random.default_rng(4)
    a = DenseModel("tn", DenseConfig(2, 30, 0.0), seed=9)
    b = DenseModel("tn", DenseConfig(2, 30, 0.05), seed=9)
    X, x_w, y = rng.standard_normal((8, 5)), rng.uniform(0, 10, 8), rng.uniform(0, 10, 8)
    noise = batch_noise(0, 1, 0, 8, 20)
    cfg = TrainConfig(n_samples=20)
    la, _ = loss_and_grad(a, X, x_w, y, cfg, noise)
    lb, _ = loss_and_grad(b, X, x_w, y, cfg, noise)
    assert lb - la == pytest.approx(l2_penalty(b), rel=1e-10)


def test_overflowing_mixture_raises_divergence():
    m = LinearModel("mix_tn_ln")
    m.params["a2"][0] = 800.0  # LN log-location far beyond the float range
    with pytest.raises(TrainingDivergence):
        with np.errstate(over="ignore", invalid="ignore"):
            loss_and_grad(m, np.zeros((2, 5)), np.zeros(2), np.ones(2), TrainConfig(n_samples=4),
                          batch_noise(0, 0, 0, 2, 4))


def test_divergence_carries_batch_index():
    m = LinearModel("tn")
    m.params["a"][:] = np.inf
    with pytest.raises(TrainingDivergence) as info:
        loss_and_grad(m, np.zeros((2, 5)), np.zeros(2), np.ones(2), TrainConfig(n_samples=4),
                      batch_noise(0, 0, 0, 2, 4), batch_index=7)
    assert info.value.batch == 7


def test_analytic_loss_only_for_tn_constant():
    with pytest.raises(ConfigurationError):
        loss_and_grad(LinearModel("ln"), np.zeros((1, 5)), np.zeros(1), np.ones(1), TrainConfig(loss="analytic"))
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(optimizer="rmsprop")


def test_analytic_and_sampled_gradients_agree_in_expectation():
    rng = np.random.default_rng(5)
    m = LinearModel("tn")
    X, x_w, y, _ = gc.random_point(m, rng, n_records=4)
    _, ga = loss_and_grad(m, X, x_w, y, TrainConfig(loss="analytic"))
    _, gs = loss_and_grad(m, X, x_w, y, TrainConfig(n_samples=200000), batch_noise(1, 0, 0, 4, 200000))
    np.testing.assert_allclose(gs["a"], ga["a"], atol=5e-3)
    np.testing.assert_allclose(gs["b"], ga["b"], atol=5e-3)


# --- projection


@pytest.fixture(scope="module")
def small_train():
    return split_folds(generate_synthetic(1500, "heavy_tail", seed=3)).select_folds("fold1", "fold2", "fold3")


def test_constraints_hold_after_training(small_train):
    cfg = TrainConfig("constant", learning_rate=0.3, batch_size=64, max_epochs=2,
                      pretrain_epochs=0, until_converged=False, n_samples=20)
    for fam in ("amix_tn_ln", "mix_tn_ln"):
        p = train(LinearModel(fam), small_train, cfg).model.params
        if "alpha" in p:
            assert ALPHA_RANGE[0] <= p["alpha"][0] <= ALPHA_RANGE[1]
            assert BETA_RANGE[0] <= p["beta"][0] <= BETA_RANGE[1]
        else:
            assert 0.0 <= p["static_w"][0] <= 1.0


# --- training protocol


def test_zero_epochs_returns_initial_model(small_train):
    m = LinearModel("gev")
    res = train(m, small_train, TrainConfig(max_epochs=0))
    for k in m.params:
        np.testing.assert_array_equal(res.model.params[k], m.params[k])
    assert res.trace == []


def test_empty_dataset_rejected(small_train):
    with pytest.raises(ConfigurationError):
        train(LinearModel("tn"), small_train.subset(np.array([], dtype=int)), TrainConfig())
    with pytest.raises(ConfigurationError):
        train(LinearModel("tn"), small_train, TrainConfig(patience=2))


def test_patience_one_stops_after_two_worse_epochs(small_train, monkeypatch):
    import windpost.optim as optim

    losses = iter([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    snapshots = []
    real_epoch = optim._run_epoch

    def recording_epoch(model, *args):
        out = real_epoch(model, *args)
        snapshots.append({k: v.copy() for k, v in model.params.items()})
        return out

    monkeypatch.setattr(optim, "evaluation_loss", lambda *a, **k: next(losses))
    monkeypatch.setattr(optim, "_run_epoch", recording_epoch)
    cfg = TrainConfig(max_epochs=10, patience=1, n_samples=10, batch_size=512)
    res = train(LinearModel("tn"), small_train, cfg, validation=small_train)
    assert res.stopped_epoch == 3 and res.best_epoch == 1
    for k in snapshots[0]:
        np.testing.assert_array_equal(res.model.params[k], snapshots[0][k])


def test_convergence_rule_stops_early(small_train):
    cfg = TrainConfig(loss="analytic", max_epochs=400, batch_size=len(small_train), learning_rate=0.05)
    res = train(LinearModel("tn"), small_train.subset(np.arange(300)), cfg)
    assert res.stopped_epoch < 400
    losses = [r["train_loss"] for r in res.trace]
    assert losses[-1] < losses[0]


@pytest.mark.parametrize("best,expected", [([60, 75, 75], 47), ([3], 2), ([0, 0], 0)])
def test_final_epoch_rule(best, expected):
    assert final_epoch_rule(best) == expected


def test_final_epoch_rule_empty():
    with pytest.raises(ValueError):
        final_epoch_rule([])


def test_training_is_deterministic(small_train):
    cfg = TrainConfig("sigmoid", max_epochs=3, until_converged=False, n_samples=30, pretrain_epochs=2, seed=5)
    a = train(LinearModel("amix_tn_ln"), small_train, cfg).model.params
    b = train(LinearModel("amix_tn_ln"), small_train, cfg).model.params
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    c = train(LinearModel("amix_tn_ln"), small_train, TrainConfig("sigmoid", max_epochs=3, until_converged=False,
                                                                  n_samples=30, pretrain_epochs=2, seed=6))
    assert not np.array_equal(a["a"], c.model.params["a"])


def test_pretrained_tn_inside_mixture_scores_like_standalone(small_train):
    cfg = TrainConfig("constant", n_samples=30, pretrain_epochs=4, seed=2)
    mix = LinearModel("mix_tn_ln")
    from windpost.data import compute_norm_stats

    mix.norm_stats = compute_norm_stats(small_train)
    pretrain_components(mix, small_train, cfg)
    from dataclasses import replace

    tn = train(LinearModel("tn", norm_stats=mix.norm_stats), small_train,
               replace(cfg, max_epochs=4, until_converged=False, pretrain_epochs=0, seed=5)).model
    np.testing.assert_array_equal(mix.params["a"], tn.params["a"])
    mix.params["static_w"][:] = 1.0
    c_mix, t_mix = mean_scores(mix, small_train, 400, seed=1)
    c_tn, t_tn = mean_scores(tn, small_train, 400, seed=1)
    assert c_mix == pytest.approx(c_tn, rel=1e-3) and t_mix == pytest.approx(t_tn, rel=1e-3, abs=1e-6)

"""Two-phase training: objective composition against hand-built oracles,
seeded determinism, the frozen-map boundary, degenerate-lambda exactness,
divergence reporting, and scoring purity."""

import types

import numpy as np
import pytest

from somdagmm import autodiff, compression, estimation, som, trainer
from somdagmm.compression import AutoencoderConfig, CompressionNet
from somdagmm.errors import DivergedError
from somdagmm.estimation import EstimationConfig, EstimationNet
from somdagmm.som import SomConfig
from somdagmm.trainer import (
    AdamOptimizer,
    TrainConfig,
    full_pass,
    latent_features,
    make_optimizer,
    objective,
    score_features,
    score_records,
    train,
)


def tight_cluster(seed, n=200, d=6, spread=0.1):
    rng = np.random.default_rng(seed)
    return 1.0 + spread * rng.normal(size=(n, d))


def small_configs(d=6, *, with_som=True, dropout=0.5, seed=0):
    som_cfg = SomConfig(grid_width=3, grid_height=3, iterations=300, seed=seed)
    ae_cfg = AutoencoderConfig((d, 4, 2), seed=seed)
    latent = (2 if with_som else 0) + 2 + 2
    est_cfg = EstimationConfig(
        latent_dim=latent, hidden_sizes=(6,), n_components=2,
        dropout=dropout, seed=seed,
    )
    return (som_cfg if with_som else None), ae_cfg, est_cfg


def test_config_validation():
    TrainConfig().validate()
    for bad in (
        TrainConfig(learning_rate=0.0),
        TrainConfig(batch_size=0),
        TrainConfig(lambda1=-0.1),
        TrainConfig(lambda2=-0.1),
        TrainConfig(epochs=-1),
        TrainConfig(eps=-1e-9),
        TrainConfig(optimizer="rmsprop"),
    ):
        with pytest.raises(ValueError):
            bad.validate()


def test_objective_value_is_the_declared_combination():
    data = tight_cluster(0)
    _, ae_cfg, est_cfg = small_configs(with_som=False, dropout=0.0)
    comp, est = CompressionNet(ae_cfg), EstimationNet(est_cfg)
    loss, (t1, t2, t3), params = objective(data, None, comp, est, 0.1, 0.005)
    assert float(loss.value) == t1 + 0.1 * t2 + 0.005 * t3
    assert len(params) == len(comp.param_arrays()) + len(est.param_arrays())


def test_objective_with_zero_lambdas_is_the_reconstruction_loss():
    data = tight_cluster(1)
    _, ae_cfg, est_cfg = small_configs(with_som=False, dropout=0.0)
    comp, est = CompressionNet(ae_cfg), EstimationNet(est_cfg)
    loss, (t1, _, _), _ = objective(data, None, comp, est, 0.0, 0.0)
    assert float(loss.value) == t1
    want = compression.reconstruction_loss(
        data, comp.decode(comp.encode(data))
    ).mean()
    assert abs(t1 - want) < 1e-12


def test_exact_reconstruction_degenerates_the_latent_and_trips_the_guard():
    # A perfect autoencoder pins z_r to (0, 1) on every row; those latent
    # columns then have exactly zero variance, and the covariance penalty
    # refuses to divide by it. The trainer turns this into DivergedError.
    d = 3
    comp = CompressionNet(AutoencoderConfig((d, d), seed=0))
    comp.enc[0][0][:] = np.eye(d)
    comp.enc[0][1][:] = 0.0
    comp.dec[0][0][:] = np.eye(d)
    comp.dec[0][1][:] = 0.0
    est = EstimationNet(
        EstimationConfig(latent_dim=2 + d, hidden_sizes=(4,), n_components=2,
                         dropout=0.0, seed=0)
    )
    data = tight_cluster(2, d=d)
    with pytest.raises(OverflowError):
        objective(data, None, comp, est, 0.1, 0.005)


def test_objective_matches_hand_composed_plain_numpy_pipeline():
    data = tight_cluster(3, n=40)
    som_cfg, ae_cfg, est_cfg = small_configs(dropout=0.0)
    som_model = som.train_som(data, som_cfg)
    z_s = som.encode_batch(som_model, data)
    comp, est = CompressionNet(ae_cfg), EstimationNet(est_cfg)

    loss, terms, _ = objective(data, z_s, comp, est, 0.1, 0.005)

    z_c = comp.encode(data)
    x_rec = comp.decode(z_c)
    z_r = compression.reconstruction_features(data, x_rec)
    z = np.concatenate([z_s, z_r, z_c], axis=1)
    gamma = est.membership(z).gamma
    gmm = estimation.estimate_gmm(gamma, z)
    want = (
        compression.reconstruction_loss(data, x_rec).mean()
        + 0.1 * estimation.energy(z, gmm).mean()
        + 0.005 * estimation.cov_penalty(gmm)
    )
    assert abs(float(loss.value) - want) < 1e-10
    zs_direct, _ = latent_features(som_model, comp, data)
    assert np.max(np.abs(zs_direct - z)) == 0.0


def test_training_is_deterministic_and_freezes_the_map():
    data = tight_cluster(4, n=96)
    som_cfg, ae_cfg, est_cfg = small_configs(seed=4)
    cfg = TrainConfig(epochs=3, batch_size=32, learning_rate=1e-3, seed=4)
    m1 = train(data, som_cfg, ae_cfg, est_cfg, cfg)
    m2 = train(data, som_cfg, ae_cfg, est_cfg, cfg)

    for a, b in zip(
        m1.compression.param_arrays() + m1.estimation.param_arrays(),
        m2.compression.param_arrays() + m2.estimation.param_arrays(),
    ):
        assert np.array_equal(a, b)
    assert m1.log == m2.log
    assert np.array_equal(m1.final_gmm.phi, m2.final_gmm.phi)
    assert np.array_equal(m1.final_gmm.mu, m2.final_gmm.mu)
    assert np.array_equal(m1.final_gmm.sigma, m2.final_gmm.sigma)

    # phase 2 never touches the map: identical to a standalone fit
    standalone = som.train_som(data, som_cfg)
    assert np.array_equal(m1.som.weights, standalone.weights)

    assert m1.latent_dim == 6 and m1.input_dim == 6
    assert len(m1.log) == 3
    for stats in m1.log:
        assert stats.objective == stats.recon + cfg.lambda1 * stats.energy + (
            cfg.lambda2 * stats.penalty
        )


def test_ablation_model_has_no_map_and_smaller_latent():
    data = tight_cluster(5, n=64)
    _, ae_cfg, est_cfg = small_configs(with_som=False, seed=5)
    cfg = TrainConfig(epochs=2, batch_size=32, learning_rate=1e-3, seed=5)
    model = train(data, None, ae_cfg, est_cfg, cfg)
    assert model.som is None
    assert model.latent_dim == 4
    e = score_features(model, data)
    assert e.shape == (64,) and np.all(np.isfinite(e))


def test_training_lowers_energy_and_reconstruction_on_a_cluster():
    # The cluster must have real spread: a near-degenerate one hands the
    # untrained nets an almost-singular mixture whose energy is already
    # extremely low, and the covariance penalty then pushes energy up.
    data = tight_cluster(6, spread=1.0)
    som_cfg, ae_cfg, est_cfg = small_configs(dropout=0.0, seed=6)
    cfg = TrainConfig(epochs=40, batch_size=64, learning_rate=1e-3, seed=6)

    som_model = som.train_som(data, som_cfg)
    comp0, est0 = CompressionNet(ae_cfg), EstimationNet(est_cfg)
    _, _, e_init = full_pass(som_model, comp0, est0, data)

    model = train(data, som_cfg, ae_cfg, est_cfg, cfg)
    _, _, e_trained = full_pass(
        model.som, model.compression, model.estimation, data
    )
    assert e_trained.mean() < e_init.mean()
    assert model.log[-1].recon < model.log[0].recon


def test_zero_lambda_training_equals_a_pure_autoencoder_loop():
    data = tight_cluster(7, n=80)
    _, ae_cfg, est_cfg = small_configs(with_som=False, dropout=0.0, seed=7)
    cfg = TrainConfig(
        epochs=4, batch_size=32, learning_rate=1e-3, seed=7,
        lambda1=0.0, lambda2=0.0,
    )
    model = train(data, None, ae_cfg, est_cfg, cfg)

    # estimation net saw only exact-zero gradients
    fresh_est = EstimationNet(est_cfg)
    for a, b in zip(model.estimation.param_arrays(), fresh_est.param_arrays()):
        assert np.array_equal(a, b)

    # compression params match a standalone reconstruction-only loop bit for bit
    comp = CompressionNet(ae_cfg)
    arrays = comp.param_arrays()
    opt = AdamOptimizer(arrays, cfg.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    n = len(data)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            x = data[order[start : start + cfg.batch_size]]
            tape = autodiff.Tape()
            params = comp.tape_params(tape)
            xc = tape.constant(x)
            _, x_rec = comp.tape_forward(params, xc)
            loss = compression.tape_reconstruction_loss(xc, x_rec).mean()
            opt.step(arrays, autodiff.gradients(loss, params))
    for a, b in zip(model.compression.param_arrays(), arrays):
        assert np.array_equal(a, b)


def test_divergence_raises_with_the_completed_log():
    data = tight_cluster(8, n=64)
    _, ae_cfg, est_cfg = small_configs(with_som=False, dropout=0.0, seed=8)
    cfg = TrainConfig(
        epochs=5, batch_size=16, learning_rate=1e12, seed=8, optimizer="sgd"
    )
    with pytest.raises(DivergedError) as info:
        train(data, None, ae_cfg, est_cfg, cfg)
    err = info.value
    assert isinstance(err.log, list)
    assert err.epoch is not None and err.batch is not None


def test_epochs_zero_scores_with_the_initialized_networks():
    data = tight_cluster(9, n=32)
    _, ae_cfg, est_cfg = small_configs(with_som=False, seed=9)
    model = train(data, None, ae_cfg, est_cfg, TrainConfig(epochs=0, seed=9))
    assert model.log == []
    fresh = CompressionNet(ae_cfg)
    for a, b in zip(model.compression.param_arrays(), fresh.param_arrays()):
        assert np.array_equal(a, b)
    assert np.all(np.isfinite(score_features(model, data)))


def test_scoring_is_pure_and_row_independent():
    data = tight_cluster(10, n=64)
    som_cfg, ae_cfg, est_cfg = small_configs(seed=10)
    model = train(
        data, som_cfg, ae_cfg, est_cfg,
        TrainConfig(epochs=3, batch_size=32, learning_rate=1e-3, seed=10),
    )
    x = tight_cluster(11, n=10)
    assert np.array_equal(score_features(model, x), score_features(model, x))
    batch = score_features(model, x)
    singles = np.array([score_features(model, row) for row in x])
    assert np.max(np.abs(batch - singles)) < 1e-10
    assert isinstance(score_features(model, x[0]), float)


def test_far_outlier_scores_above_the_training_bulk():
    data = tight_cluster(12)
    som_cfg, ae_cfg, est_cfg = small_configs(dropout=0.0, seed=12)
    model = train(
        data, som_cfg, ae_cfg, est_cfg,
        TrainConfig(epochs=30, batch_size=64, learning_rate=1e-3, seed=12),
    )
    e_train = score_features(model, data)
    outlier = np.full(6, 50.0)
    assert score_features(model, outlier) > np.median(e_train)


def test_score_records_goes_through_stored_preprocessing():
    data = tight_cluster(13, n=48)
    _, ae_cfg, est_cfg = small_configs(with_som=False, seed=13)
    model = train(
        data, None, ae_cfg, est_cfg,
        TrainConfig(epochs=2, batch_size=16, learning_rate=1e-3, seed=13),
    )
    with pytest.raises(ValueError):
        score_records(model, ["raw"])
    model.preprocessing = types.SimpleNamespace(
        transform=lambda records: data[: len(records)]
    )
    got = score_records(model, ["a", "b", "c"])
    assert np.array_equal(got, score_features(model, data[:3]))


def test_shape_and_config_mismatches_are_rejected():
    data = tight_cluster(14, n=32)
    _, ae_cfg, est_cfg = small_configs(with_som=False, seed=14)
    with pytest.raises(ValueError):
        train(np.zeros((0, 6)), None, ae_cfg, est_cfg, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(data[:, :5], None, ae_cfg, est_cfg, TrainConfig(epochs=1))
    wrong_latent = EstimationConfig(latent_dim=9, dropout=0.0)
    with pytest.raises(ValueError):
        train(data, None, ae_cfg, wrong_latent, TrainConfig(epochs=1))
    model = train(
        data, None, ae_cfg, est_cfg, TrainConfig(epochs=1, learning_rate=1e-3)
    )
    with pytest.raises(ValueError):
        score_features(model, np.zeros((2, 5)))


def test_default_configs_are_derived_from_the_data():
    data = tight_cluster(15, n=40, d=7)
    model = train(data, None, None, None, TrainConfig(epochs=1, seed=15))
    assert model.compression.config.layer_sizes == (7, 6, 1)
    assert model.estimation.config.latent_dim == model.latent_dim == 3
    assert make_optimizer(TrainConfig(), []).__class__ is AdamOptimizer


def test_sgd_optimizer_takes_plain_steps():
    arrays = [np.array([1.0, 2.0])]
    opt = make_optimizer(TrainConfig(optimizer="sgd", learning_rate=0.5), arrays)
    opt.step(arrays, [np.array([2.0, -2.0])])
    assert np.array_equal(arrays[0], [0.0, 3.0])

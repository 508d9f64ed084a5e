"""Model persistence: byte-stable save/load round trips, bit-identical
scoring across the round trip, optional sections, and corruption checks."""

import numpy as np
import pytest

from somdagmm.compression import AutoencoderConfig
from somdagmm.data import (
    Feature,
    Preprocessor,
    RecordSchema,
    fit_transform,
    ParsedRecords,
)
from somdagmm.errors import DataError
from somdagmm.estimation import EstimationConfig
from somdagmm.modelfile import load_model, save_model
from somdagmm.som import SomConfig
from somdagmm.trainer import TrainConfig, score_features, train

SCHEMA = RecordSchema(
    features=(
        Feature("size"),
        Feature("color", ("red", "green", "blue")),
        Feature("weight"),
    ),
    label_set=("bad",),
)


def make_records(n, seed):
    rng = np.random.default_rng(seed)
    return ParsedRecords(
        cont=rng.uniform(0, 10, size=(n, 2)),
        cat=rng.integers(0, 3, size=(n, 1)),
        labels=tuple("good" for _ in range(n)),
        anomalies=np.zeros(n, dtype=bool),
        source="synthetic",
    )


def trained_model(seed=0, *, with_som=True, with_pre=True, dropout=0.5):
    records = make_records(120, seed)
    dataset, stats = fit_transform(records, SCHEMA)
    som_cfg = (
        SomConfig(grid_width=3, grid_height=4, iterations=200, seed=seed)
        if with_som
        else None
    )
    latent = (2 if with_som else 0) + 2 + 2
    model = train(
        dataset.features,
        som_cfg,
        AutoencoderConfig((5, 4, 2), seed=seed),
        EstimationConfig(latent_dim=latent, hidden_sizes=(6,), n_components=2,
                         dropout=dropout, seed=seed),
        TrainConfig(epochs=2, batch_size=32, learning_rate=1e-3, seed=seed),
    )
    if with_pre:
        model.preprocessing = Preprocessor(schema=SCHEMA, stats=stats)
    return model


def test_round_trip_preserves_everything(tmp_path):
    model = trained_model(0)
    p1 = tmp_path / "model.txt"
    save_model(p1, model)
    loaded = load_model(p1)

    assert loaded.train_config == model.train_config
    assert loaded.som.config == model.som.config
    assert np.array_equal(loaded.som.weights, model.som.weights)
    assert loaded.compression.config == model.compression.config
    for (w1, b1), (w2, b2) in zip(model.compression.enc, loaded.compression.enc):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    for (w1, b1), (w2, b2) in zip(model.compression.dec, loaded.compression.dec):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    assert loaded.estimation.config == model.estimation.config
    for (w1, b1), (w2, b2) in zip(model.estimation.layers, loaded.estimation.layers):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    assert np.array_equal(loaded.final_gmm.phi, model.final_gmm.phi)
    assert np.array_equal(loaded.final_gmm.mu, model.final_gmm.mu)
    assert np.array_equal(loaded.final_gmm.sigma, model.final_gmm.sigma)
    assert loaded.preprocessing.schema == SCHEMA
    assert np.array_equal(
        loaded.preprocessing.stats.mins, model.preprocessing.stats.mins
    )

    # resaving the loaded model reproduces the file byte for byte
    p2 = tmp_path / "again.txt"
    save_model(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_scoring_is_bit_identical_across_the_round_trip(tmp_path):
    model = trained_model(1)
    path = tmp_path / "model.txt"
    save_model(path, model)
    loaded = load_model(path)
    x = np.random.default_rng(99).uniform(0, 1, size=(1000, 5))
    assert np.array_equal(score_features(model, x), score_features(loaded, x))


def test_map_free_model_has_no_som_section(tmp_path):
    model = trained_model(2, with_som=False)
    path = tmp_path / "model.txt"
    save_model(path, model)
    text = path.read_text()
    assert "section som" not in text
    assert "section compression" in text
    loaded = load_model(path)
    assert loaded.som is None
    assert loaded.latent_dim == 4
    x = np.random.default_rng(5).uniform(0, 1, size=(50, 5))
    assert np.array_equal(score_features(model, x), score_features(loaded, x))


def test_feature_only_model_has_no_preprocess_section(tmp_path):
    model = trained_model(3, with_pre=False)
    path = tmp_path / "model.txt"
    save_model(path, model)
    text = path.read_text()
    assert text.splitlines()[1] == "schema-hash -"
    assert "section preprocess" not in text
    loaded = load_model(path)
    assert loaded.preprocessing is None


def test_preprocessing_transform_survives_the_round_trip(tmp_path):
    model = trained_model(4)
    path = tmp_path / "model.txt"
    save_model(path, model)
    loaded = load_model(path)
    fresh = make_records(30, 44)
    assert np.array_equal(
        loaded.preprocessing.transform(fresh),
        model.preprocessing.transform(fresh),
    )


def test_corrupted_files_are_rejected(tmp_path):
    model = trained_model(5)
    path = tmp_path / "model.txt"
    save_model(path, model)
    good = path.read_text().splitlines(keepends=True)

    def variant(name, mutate):
        p = tmp_path / name
        lines = list(good)
        mutate(lines)
        p.write_text("".join(lines))
        return p

    cases = [
        variant("magic.txt", lambda l: l.__setitem__(0, "other-model 1\n")),
        variant("version.txt", lambda l: l.__setitem__(0, "somdagmm-model 7\n")),
        variant("truncated.txt", lambda l: l.__delitem__(slice(-5, None))),
        variant(
            "flags.txt",
            lambda l: l.__setitem__(
                next(i for i, ln in enumerate(good) if ln.startswith("recon-features")),
                "recon-features euclidean\n",
            ),
        ),
        variant(
            "latent.txt",
            lambda l: l.__setitem__(
                next(i for i, ln in enumerate(good) if ln.startswith("latent-dim")),
                "latent-dim 9\n",
            ),
        ),
        variant(
            "rowwidth.txt",
            lambda l: l.__setitem__(
                next(i for i, ln in enumerate(good) if ln.startswith("array phi")) + 1,
                "0.5\n",
            ),
        ),
    ]
    for p in cases:
        with pytest.raises(DataError):
            load_model(p)
    with pytest.raises(DataError):
        load_model(tmp_path / "absent.txt")


def test_error_messages_carry_position(tmp_path):
    model = trained_model(6)
    path = tmp_path / "model.txt"
    save_model(path, model)
    lines = path.read_text().splitlines(keepends=True)
    lines[2] = "bogus line\n"
    bad = tmp_path / "bad.txt"
    bad.write_text("".join(lines))
    with pytest.raises(DataError, match=r"bad\.txt:3"):
        load_model(bad)

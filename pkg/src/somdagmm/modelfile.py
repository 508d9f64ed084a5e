"""Versioned text model files.

A trained model persists as a human-inspectable, diff-able text file:
section headers, key-value lines, and array blocks whose floats use
round-trip decimal representation, so save -> load -> score is
bit-identical to scoring before the save. The map section is absent for
models trained without one; the preprocess section is absent for models
trained directly on feature matrices.
"""

import numpy as np

from . import data as datamod
from .compression import AutoencoderConfig, CompressionNet
from .errors import DataError
from .estimation import EstimationConfig, EstimationNet, GmmParams
from .som import SomConfig, SomModel
from .trainer import TrainConfig, TrainedModel

MODEL_MAGIC = "somdagmm-model"
MODEL_VERSION = 1


def _fmt(value) -> str:
    return repr(float(value))


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")] if text != "-" else []


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    dims = " ".join(str(d) for d in arr.shape)
    fh.write(f"array {name} {arr.ndim} {dims}\n")
    flat = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 0 else arr.reshape(1, 1)
    for row in flat:
        fh.write(" ".join(_fmt(v) for v in row) + "\n")


class _Reader:
    """Line cursor with strict key expectations and array decoding."""

    def __init__(self, path):
        try:
            with open(path, encoding="utf-8") as fh:
                self.lines = fh.read().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read model {path}: {exc}") from exc
        self.pos = 0
        self.path = path

    def fail(self, msg: str):
        raise DataError(f"{self.path}:{self.pos}: {msg}")

    def peek(self) -> str | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def next(self) -> str:
        line = self.peek()
        if line is None:
            self.fail("unexpected end of model file")
        self.pos += 1
        return line

    def expect(self, key: str) -> str:
        line = self.next()
        head, _, rest = line.partition(" ")
        if head != key:
            self.fail(f"expected {key!r}, found {head!r}")
        return rest

    def array(self, name: str) -> np.ndarray:
        rest = self.expect("array").split()
        if not rest or rest[0] != name:
            self.fail(f"expected array {name!r}")
        ndim = int(rest[1])
        shape = tuple(int(v) for v in rest[2 : 2 + ndim])
        rows = int(np.prod(shape[:-1])) if ndim > 1 else 1
        width = shape[-1]
        out = np.empty((rows, width))
        for i in range(rows):
            cells = self.next().split()
            if len(cells) != width:
                self.fail(f"array {name!r} row {i}: expected {width} values")
            out[i] = [float(v) for v in cells]
        return out.reshape(shape)


def save_model(path, model: TrainedModel) -> None:
    pre = model.preprocessing
    cfg = model.train_config
    comp = model.compression
    est = model.estimation
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC} {MODEL_VERSION}\n")
        if pre is not None:
            fh.write(f"schema-hash {datamod.schema_hash(pre.schema)}\n")
        else:
            fh.write("schema-hash -\n")
        fh.write(
            "flags "
            f"recon_features={comp.config.recon_features} "
            f"cov_eps={_fmt(cfg.eps)} "
            "energy_norm_eps=1e-12 "
            "threshold_default=percentile:test-anomaly-ratio\n"
        )
        fh.write("section train-config\n")
        fh.write(f"learning-rate {_fmt(cfg.learning_rate)}\n")
        fh.write(f"batch-size {cfg.batch_size}\n")
        fh.write(f"lambda1 {_fmt(cfg.lambda1)}\n")
        fh.write(f"lambda2 {_fmt(cfg.lambda2)}\n")
        fh.write(f"epochs {cfg.epochs}\n")
        fh.write(f"seed {cfg.seed}\n")
        fh.write(f"eps {_fmt(cfg.eps)}\n")
        fh.write(f"optimizer {cfg.optimizer}\n")
        if pre is not None:
            schema_lines = datamod.serialize_schema(pre.schema).splitlines()
            fh.write("section preprocess\n")
            fh.write(f"policy {pre.policy}\n")
            fh.write(
                f"stats-mins {' '.join(_fmt(v) for v in pre.stats.mins)}\n"
            )
            fh.write(
                f"stats-maxs {' '.join(_fmt(v) for v in pre.stats.maxs)}\n"
            )
            fh.write(f"schema-lines {len(schema_lines)}\n")
            for ln in schema_lines:
                fh.write(ln + "\n")
        if model.som is not None:
            sc = model.som.config
            fh.write("section som\n")
            fh.write(f"grid-width {sc.grid_width}\n")
            fh.write(f"grid-height {sc.grid_height}\n")
            fh.write(f"learning-rate {_fmt(sc.learning_rate)}\n")
            fh.write(f"neighborhood {sc.neighborhood}\n")
            fh.write(f"initial-radius {_fmt(sc.initial_radius)}\n")
            fh.write(f"iterations {sc.iterations}\n")
            fh.write(f"seed {sc.seed}\n")
            _write_array(fh, "weights", model.som.weights)
        ac = comp.config
        fh.write("section compression\n")
        fh.write(f"layer-sizes {','.join(str(s) for s in ac.layer_sizes)}\n")
        fh.write(f"activation {ac.activation}\n")
        fh.write(f"recon-features {ac.recon_features}\n")
        fh.write(f"seed {ac.seed}\n")
        for i, (w, b) in enumerate(comp.enc):
            _write_array(fh, f"enc-{i}-w", w)
            _write_array(fh, f"enc-{i}-b", b)
        for i, (w, b) in enumerate(comp.dec):
            _write_array(fh, f"dec-{i}-w", w)
            _write_array(fh, f"dec-{i}-b", b)
        ec = est.config
        fh.write("section estimation\n")
        fh.write(f"latent-dim {ec.latent_dim}\n")
        hidden = ",".join(str(s) for s in ec.hidden_sizes) or "-"
        fh.write(f"hidden-sizes {hidden}\n")
        fh.write(f"components {ec.n_components}\n")
        fh.write(f"dropout {_fmt(ec.dropout)}\n")
        fh.write(f"seed {ec.seed}\n")
        for i, (w, b) in enumerate(est.layers):
            _write_array(fh, f"layer-{i}-w", w)
            _write_array(fh, f"layer-{i}-b", b)
        fh.write("section gmm\n")
        _write_array(fh, "phi", model.final_gmm.phi)
        _write_array(fh, "mu", model.final_gmm.mu)
        _write_array(fh, "sigma", model.final_gmm.sigma)
        fh.write("end\n")


def load_model(path) -> TrainedModel:
    r = _Reader(path)
    version = r.expect(MODEL_MAGIC)
    if version != str(MODEL_VERSION):
        r.fail(f"unsupported model version {version!r}")
    recorded_hash = r.expect("schema-hash")
    flag_pairs = dict(
        item.partition("=")[::2] for item in r.expect("flags").split()
    )
    if r.expect("section") != "train-config":
        r.fail("model must start with the train-config section")
    train_cfg = TrainConfig(
        learning_rate=float(r.expect("learning-rate")),
        batch_size=int(r.expect("batch-size")),
        lambda1=float(r.expect("lambda1")),
        lambda2=float(r.expect("lambda2")),
        epochs=int(r.expect("epochs")),
        seed=int(r.expect("seed")),
        eps=float(r.expect("eps")),
        optimizer=r.expect("optimizer"),
    )
    section = r.expect("section")

    preprocessor = None
    if section == "preprocess":
        policy = r.expect("policy")
        mins = np.array([float(v) for v in r.expect("stats-mins").split()])
        maxs = np.array([float(v) for v in r.expect("stats-maxs").split()])
        n_schema = int(r.expect("schema-lines"))
        schema = datamod.parse_schema_text(
            "\n".join(r.next() for _ in range(n_schema))
        )
        if datamod.schema_hash(schema) != recorded_hash:
            r.fail("embedded schema does not match the recorded hash")
        stats = datamod.PreprocessStats(mins=mins, maxs=maxs)
        stats.validate()
        preprocessor = datamod.Preprocessor(schema, stats, policy)
        section = r.expect("section")

    som_model = None
    if section == "som":
        som_cfg = SomConfig(
            grid_width=int(r.expect("grid-width")),
            grid_height=int(r.expect("grid-height")),
            learning_rate=float(r.expect("learning-rate")),
            neighborhood=r.expect("neighborhood"),
            initial_radius=float(r.expect("initial-radius")),
            iterations=int(r.expect("iterations")),
            seed=int(r.expect("seed")),
        )
        weights = r.array("weights")
        if weights.shape[:2] != (som_cfg.grid_width, som_cfg.grid_height):
            r.fail("map weights do not match the recorded grid")
        som_model = SomModel(config=som_cfg, weights=weights)
        section = r.expect("section")

    if section != "compression":
        r.fail(f"expected the compression section, found {section!r}")
    ae_cfg = AutoencoderConfig(
        layer_sizes=tuple(_ints(r.expect("layer-sizes"))),
        activation=r.expect("activation"),
        recon_features=r.expect("recon-features"),
        seed=int(r.expect("seed")),
    )
    if ae_cfg.recon_features != flag_pairs.get("recon_features"):
        r.fail("flags and compression section disagree on recon_features")
    comp = CompressionNet(ae_cfg)
    for i in range(len(comp.enc)):
        comp.enc[i] = (r.array(f"enc-{i}-w"), r.array(f"enc-{i}-b"))
    for i in range(len(comp.dec)):
        comp.dec[i] = (r.array(f"dec-{i}-w"), r.array(f"dec-{i}-b"))

    if r.expect("section") != "estimation":
        r.fail("expected the estimation section")
    est_cfg = EstimationConfig(
        latent_dim=int(r.expect("latent-dim")),
        hidden_sizes=tuple(_ints(r.expect("hidden-sizes"))),
        n_components=int(r.expect("components")),
        dropout=float(r.expect("dropout")),
        seed=int(r.expect("seed")),
    )
    est = EstimationNet(est_cfg)
    for i in range(len(est.layers)):
        est.layers[i] = (r.array(f"layer-{i}-w"), r.array(f"layer-{i}-b"))

    if r.expect("section") != "gmm":
        r.fail("expected the gmm section")
    gmm = GmmParams(phi=r.array("phi"), mu=r.array("mu"), sigma=r.array("sigma"))
    if r.next() != "end":
        r.fail("missing end marker")

    model = TrainedModel(
        som=som_model,
        compression=comp,
        estimation=est,
        final_gmm=gmm,
        train_config=train_cfg,
        log=[],
        preprocessing=preprocessor,
    )
    expected_latent = model.latent_dim
    if est_cfg.latent_dim != expected_latent:
        r.fail(
            f"estimation input {est_cfg.latent_dim} does not match "
            f"latent width {expected_latent}"
        )
    if gmm.dim != expected_latent:
        r.fail(f"gmm dimension {gmm.dim} does not match latent {expected_latent}")
    return model

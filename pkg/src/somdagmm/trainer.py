"""Two-phase training and scoring.

Phase 1 fits the self-organizing map on the preprocessed features and
freezes it; its normalized grid coordinates are computed once per sample
and enter the latent vector as constants, so no gradient ever reaches
the map. Phase 2 jointly trains the compression and estimation networks
by minibatch gradient descent on

    J = mean reconstruction loss
        + lambda1 * mean sample energy
        + lambda2 * covariance penalty

After the final epoch the GMM is re-estimated in one full-dataset pass
with dropout off and stored for scoring, so inference never depends on
the last minibatch's composition.

Determinism contract: all randomness of phase 2 derives from
TrainConfig.seed via numpy SeedSequence spawning -- child 0 drives the
per-epoch shuffles, child 1 the dropout masks. Sub-network inits use
their own config seeds.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff, compression, estimation, som
from .autodiff import Tape
from .compression import AutoencoderConfig, CompressionNet
from .errors import DivergedError, SingularMatrixError
from .estimation import EstimationConfig, EstimationNet, GmmParams
from .som import SomConfig, SomModel

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    """Joint-training hyperparameters; defaults follow the DAGMM setting."""

    learning_rate: float = 0.0001
    batch_size: int = 1024
    lambda1: float = 0.1
    lambda2: float = 0.005
    epochs: int = 200
    seed: int = 0
    eps: float = 1e-6
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass(frozen=True)
class EpochStats:
    """Per-epoch sample-weighted averages of the three objective terms."""

    epoch: int
    recon: float
    energy: float
    penalty: float
    objective: float  # recon + lambda1*energy + lambda2*penalty, exactly


@dataclass
class TrainedModel:
    """Everything scoring needs, plus the training log for reports."""

    som: SomModel | None
    compression: CompressionNet
    estimation: EstimationNet
    final_gmm: GmmParams
    train_config: TrainConfig
    log: list[EpochStats] = field(default_factory=list)
    preprocessing: object | None = None  # data-pipeline Preprocessor, set by callers

    @property
    def latent_dim(self) -> int:
        som_dim = 2 if self.som is not None else 0
        return (
            som_dim
            + self.compression.config.recon_dim
            + self.compression.config.code_dim
        )

    @property
    def input_dim(self) -> int:
        return self.compression.config.input_dim


class AdamOptimizer:
    """Adam with bias correction; state arrays parallel the parameter list."""

    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            a -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SgdOptimizer:
    """Plain gradient descent at a fixed step size."""

    def __init__(self, arrays, lr):
        self.lr = lr

    def step(self, arrays, grads) -> None:
        for a, g in zip(arrays, grads):
            a -= self.lr * g


def make_optimizer(config: TrainConfig, arrays) -> AdamOptimizer | SgdOptimizer:
    if config.optimizer == "adam":
        return AdamOptimizer(arrays, config.learning_rate)
    return SgdOptimizer(arrays, config.learning_rate)


def _diverged(message, epoch, batch, log) -> DivergedError:
    """Divergence error carrying the completed-epoch log for callers."""
    err = DivergedError(message, epoch, batch)
    err.log = list(log)
    return err


def objective(
    x: np.ndarray,
    z_s: np.ndarray | None,
    comp: CompressionNet,
    est: EstimationNet,
    lambda1: float,
    lambda2: float,
    eps: float = estimation.DEFAULT_COV_EPS,
    masks: list[np.ndarray] | None = None,
):
    """Build the joint objective on a fresh tape.

    Returns (loss Var, (recon, energy, penalty) floats, parameter Vars).
    z_s rows enter as constants -- the frozen-map boundary. ``masks`` are
    precomputed dropout masks (None for the deterministic path).
    """
    tape = Tape()
    comp_params = comp.tape_params(tape)
    est_params = est.tape_params(tape)
    x_const = tape.constant(x)
    z_c, x_rec = comp.tape_forward(comp_params, x_const)
    recon = compression.tape_reconstruction_loss(x_const, x_rec)
    term1 = recon.mean()
    z_r = compression.tape_reconstruction_features(
        x_const, x_rec, comp.config.recon_features
    )
    parts = [z_r, z_c]
    if z_s is not None:
        parts.insert(0, tape.constant(z_s))
    z = autodiff.concat_cols(parts)
    gamma = est.tape_membership(est_params, z, masks)
    phi, mu, sigma = estimation.tape_estimate_gmm(tape, gamma, z, eps)
    term2 = estimation.tape_energy(tape, z, phi, mu, sigma, eps).mean()
    term3 = estimation.tape_cov_penalty(tape, sigma)
    loss = term1 + lambda1 * term2 + lambda2 * term3
    terms = (float(term1.value), float(term2.value), float(term3.value))
    return loss, terms, comp_params + est_params


def latent_features(
    som_model: SomModel | None, comp: CompressionNet, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Plain latent batch: (z, x_rec) with z = [z_s?, z_r, z_c] rows."""
    x = np.asarray(x, dtype=np.float64)
    z_c = comp.encode(x)
    x_rec = comp.decode(z_c)
    z_r = compression.reconstruction_features(x, x_rec, comp.config.recon_features)
    parts = [z_r, z_c]
    if som_model is not None:
        parts.insert(0, som.encode_batch(som_model, x))
    return np.concatenate(parts, axis=1), x_rec


def full_pass(
    som_model: SomModel | None,
    comp: CompressionNet,
    est: EstimationNet,
    x: np.ndarray,
    eps: float = estimation.DEFAULT_COV_EPS,
) -> tuple[np.ndarray, GmmParams, np.ndarray]:
    """Deterministic whole-dataset pass: (z, estimated GMM, energies)."""
    z, _ = latent_features(som_model, comp, x)
    gamma = est.membership(z).gamma
    gmm = estimation.estimate_gmm(gamma, z, eps)
    return z, gmm, estimation.energy(z, gmm, eps)


def train(
    data: np.ndarray,
    som_cfg: SomConfig | None,
    ae_cfg: AutoencoderConfig | None,
    est_cfg: EstimationConfig | None,
    train_cfg: TrainConfig,
) -> TrainedModel:
    """Run both phases on a preprocessed feature matrix.

    som_cfg None drops the map entirely (the ablation arm: latent is
    [z_r, z_c]). ae_cfg/est_cfg None use defaults sized to the data.
    Raises DivergedError when the objective goes non-finite or a
    factorization collapses, carrying the last completed epoch.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("training data must be a non-empty 2-D matrix")
    train_cfg.validate()
    n, d = data.shape

    if ae_cfg is None:
        ae_cfg = AutoencoderConfig(compression.default_layer_sizes(d))
    comp = CompressionNet(ae_cfg)
    if comp.config.input_dim != d:
        raise ValueError(
            f"autoencoder input {comp.config.input_dim} does not match data width {d}"
        )

    som_dim = 2 if som_cfg is not None else 0
    latent = som_dim + comp.config.recon_dim + comp.config.code_dim
    if est_cfg is None:
        est_cfg = EstimationConfig(latent_dim=latent)
    if est_cfg.latent_dim != latent:
        raise ValueError(
            f"estimation input {est_cfg.latent_dim} does not match latent width {latent}"
        )
    est = EstimationNet(est_cfg)

    # Phase 1: fit the map, then freeze its encodings.
    if som_cfg is not None:
        som_model = som.train_som(data, som_cfg)
        z_s_all = som.encode_batch(som_model, data)
    else:
        som_model = None
        z_s_all = None

    # Phase 2: joint minibatch training of both networks.
    children = np.random.SeedSequence(train_cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(children[0])
    dropout_rng = np.random.default_rng(children[1])
    arrays = comp.param_arrays() + est.param_arrays()
    opt = make_optimizer(train_cfg, arrays)
    log: list[EpochStats] = []

    for epoch in range(train_cfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for batch_idx, start in enumerate(range(0, n, train_cfg.batch_size)):
            rows = order[start : start + train_cfg.batch_size]
            x = data[rows]
            z_s = None if z_s_all is None else z_s_all[rows]
            masks = (
                est.dropout_masks(len(rows), dropout_rng)
                if est.config.dropout > 0.0
                else None
            )
            try:
                loss, terms, params = objective(
                    x,
                    z_s,
                    comp,
                    est,
                    train_cfg.lambda1,
                    train_cfg.lambda2,
                    train_cfg.eps,
                    masks,
                )
            except (SingularMatrixError, OverflowError) as exc:
                raise _diverged(
                    f"objective collapsed: {exc}", epoch - 1, batch_idx, log
                ) from exc
            if not np.isfinite(loss.value):
                raise _diverged("objective is not finite", epoch - 1, batch_idx, log)
            grads = autodiff.gradients(loss, params)
            opt.step(arrays, grads)
            sums += len(rows) * np.asarray(terms)
        t1, t2, t3 = (float(v) for v in sums / n)
        log.append(
            EpochStats(
                epoch=epoch,
                recon=t1,
                energy=t2,
                penalty=t3,
                objective=t1 + train_cfg.lambda1 * t2 + train_cfg.lambda2 * t3,
            )
        )

    # Freeze the mixture over the whole set, dropout off.
    try:
        _, final_gmm, _ = full_pass(som_model, comp, est, data, train_cfg.eps)
    except (SingularMatrixError, OverflowError) as exc:
        raise _diverged(
            f"final mixture estimation collapsed: {exc}",
            train_cfg.epochs - 1,
            -1,
            log,
        ) from exc
    return TrainedModel(
        som=som_model,
        compression=comp,
        estimation=est,
        final_gmm=final_gmm,
        train_config=train_cfg,
        log=log,
    )


def score_features(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    """Energies of already-preprocessed rows against the frozen mixture.

    Pure and row-independent: batch scoring equals mapping over rows.
    Higher energy means more anomalous.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[1] != model.input_dim:
        raise ValueError(
            f"feature width {x2.shape[1]} does not match model input {model.input_dim}"
        )
    z, _ = latent_features(model.som, model.compression, x2)
    e = estimation.energy(z, model.final_gmm, model.train_config.eps)
    return float(e[0]) if single else e


def score_records(model: TrainedModel, records) -> np.ndarray:
    """Energies of raw records via the model's stored preprocessing."""
    if model.preprocessing is None:
        raise ValueError("model carries no preprocessing stats; score features instead")
    return score_features(model, model.preprocessing.transform(records))

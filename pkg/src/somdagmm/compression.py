"""Deep autoencoder: encoder to a low-dimensional code, mirrored decoder,
and the two reconstruction features (relative Euclidean distance, cosine
similarity) that ride along with the code into the estimation network.

Hidden layers are tanh; the code layer and the final output layer are
linear. Forward passes exist twice: a plain numpy path for scoring and a
tape path used during training; tests pin the two to each other.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import Tape, Var

EPS_NORM = 1e-12

RECON_FEATURE_MODES = ("both", "euclidean")


@dataclass(frozen=True)
class AutoencoderConfig:
    """Encoder-side layer sizes, input dimension first, code dimension last."""

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    seed: int = 0
    recon_features: str = "both"  # "both": [rel_euclidean, cosine]; "euclidean": first only

    def validate(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and code sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")
        if self.recon_features not in RECON_FEATURE_MODES:
            raise ValueError(f"recon_features must be one of {RECON_FEATURE_MODES}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def code_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def recon_dim(self) -> int:
        return 2 if self.recon_features == "both" else 1


def default_layer_sizes(input_dim: int) -> tuple[int, ...]:
    """122 -> 60 -> 30 -> 10 -> 1 for full-width inputs, thinned for small ones."""
    hidden = [s for s in (60, 30, 10) if s < input_dim]
    if not hidden:
        hidden = [max(2, input_dim - 1)]
    return (input_dim, *hidden, 1)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class CompressionNet:
    """Autoencoder parameters: encoder layers and their exact mirror."""

    def __init__(self, config: AutoencoderConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        sizes = config.layer_sizes
        self.enc = [
            (_glorot(rng, a, b), np.zeros(b)) for a, b in zip(sizes, sizes[1:])
        ]
        mirror = sizes[::-1]
        self.dec = [
            (_glorot(rng, a, b), np.zeros(b)) for a, b in zip(mirror, mirror[1:])
        ]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.enc + self.dec:
            out.extend((w, b))
        return out

    # -- plain forward -------------------------------------------------

    def encode(self, x: np.ndarray) -> np.ndarray:
        """(N, d) -> (N, code_dim); tanh hiddens, linear code layer."""
        h = self._check(x)
        for idx, (w, b) in enumerate(self.enc):
            h = h @ w + b
            if idx < len(self.enc) - 1:
                h = np.tanh(h)
        return h

    def decode(self, z_c: np.ndarray) -> np.ndarray:
        """(N, code_dim) -> (N, d); tanh hiddens, linear output layer."""
        h = np.asarray(z_c, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.config.code_dim:
            raise ValueError(
                f"code dimension {h.shape[-1]} does not match {self.config.code_dim}"
            )
        for idx, (w, b) in enumerate(self.dec):
            h = h @ w + b
            if idx < len(self.dec) - 1:
                h = np.tanh(h)
        return h

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"input dimension {x.shape[-1]} does not match {self.config.input_dim}"
            )
        return x

    # -- tape forward ---------------------------------------------------

    def tape_params(self, tape: Tape) -> list[Var]:
        return [tape.param(a) for a in self.param_arrays()]

    def tape_forward(self, params: list[Var], x_const: Var) -> tuple[Var, Var]:
        """(z_c, x_rec) built on the tape from the lifted parameter list."""
        n_enc = len(self.enc)
        h = x_const
        for idx in range(n_enc):
            h = h @ params[2 * idx] + params[2 * idx + 1]
            if idx < n_enc - 1:
                h = h.tanh()
        z_c = h
        for idx in range(len(self.dec)):
            base = 2 * (n_enc + idx)
            h = h @ params[base] + params[base + 1]
            if idx < len(self.dec) - 1:
                h = h.tanh()
        return z_c, h


def reconstruction_features(
    x: np.ndarray, x_rec: np.ndarray, mode: str = "both"
) -> np.ndarray:
    """Per-row [relative Euclidean distance, cosine similarity] (N, 2).

    rel = ||x - x'|| / max(||x||, 1e-12); cos = <x, x'> / max(||x|| ||x'||, 1e-12).
    The floors keep both finite for zero vectors. mode="euclidean" drops
    the cosine column.
    """
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_rec.shape}")
    x_norm = np.linalg.norm(x, axis=-1)
    rec_norm = np.linalg.norm(x_rec, axis=-1)
    rel = np.linalg.norm(x - x_rec, axis=-1) / np.maximum(x_norm, EPS_NORM)
    if mode == "euclidean":
        return rel[..., None]
    cos = np.sum(x * x_rec, axis=-1) / np.maximum(x_norm * rec_norm, EPS_NORM)
    return np.stack([rel, cos], axis=-1)


def reconstruction_loss(x: np.ndarray, x_rec: np.ndarray) -> np.ndarray:
    """Per-row squared L2 distance ||x - x'||^2."""
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_rec.shape}")
    d = x - x_rec
    return np.sum(d * d, axis=-1)


def tape_reconstruction_features(x_const: Var, x_rec: Var, mode: str = "both") -> Var:
    """Tape version of reconstruction_features; x_const carries the data."""
    xv = x_const.value
    diff = x_const - x_rec
    dist = (diff * diff).sum(axis=1).sqrt()
    x_norm = np.linalg.norm(xv, axis=1)
    rel = dist * (1.0 / np.maximum(x_norm, EPS_NORM))
    n = xv.shape[0]
    if mode == "euclidean":
        return rel.reshape(n, 1)
    dot = (x_const * x_rec).sum(axis=1)
    rec_norm = (x_rec * x_rec).sum(axis=1).sqrt()
    cos = dot / (rec_norm * x_norm).clip_min(EPS_NORM)
    return autodiff.concat_cols([rel.reshape(n, 1), cos.reshape(n, 1)])


def tape_reconstruction_loss(x_const: Var, x_rec: Var) -> Var:
    """Tape version of reconstruction_loss: per-row squared L2 distance."""
    diff = x_const - x_rec
    return (diff * diff).sum(axis=1)

"""Kohonen self-organizing map: training, BMU lookup, normalized-coordinate
encoding, and quantization error.

The trained map doubles as an encoder: a sample is mapped to the grid
coordinates of its best matching unit, normalized into [0, 1]^2. Training is
gradient-free competitive learning and happens once, before the autoencoder
half of the model; a trained map is immutable.

The sequential training loop and batch BMU search run through a compiled
kernel when the ``_som_core`` extension is available, else through the
numpy fallback ``_som_py``. Set SOMDAGMM_PURE_PYTHON=1 to force the
fallback.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np

if os.environ.get("SOMDAGMM_PURE_PYTHON"):
    from . import _som_py as _kernel

    KERNEL_BACKEND = "python"
else:
    try:
        from . import _som_core as _kernel  # type: ignore[attr-defined]

        KERNEL_BACKEND = "cython"
    except ImportError:
        from . import _som_py as _kernel

        KERNEL_BACKEND = "python"

NEIGHBORHOODS = ("bubble", "gaussian")

# Step budget when SomConfig.iterations is left unset.
AUTO_ITER_PER_SAMPLE = 10
AUTO_ITER_CAP = 500_000


@dataclass(frozen=True)
class SomConfig:
    grid_width: int = 10
    grid_height: int = 10
    learning_rate: float = 0.6
    neighborhood: str = "bubble"
    initial_radius: float = 5.0
    iterations: int | None = None  # None: 10 per sample, capped at 500k
    seed: int = 0

    def validate(self) -> None:
        if self.grid_width < 2 or self.grid_height < 2:
            raise ValueError("grid must be at least 2x2")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ValueError(f"neighborhood must be one of {NEIGHBORHOODS}")
        if self.initial_radius <= 0:
            raise ValueError("initial_radius must be positive")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be positive when given")


@dataclass
class SomModel:
    """A trained map: (grid_width, grid_height, d) weight array plus config."""

    config: SomConfig
    weights: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.weights.shape[2]

    def flat_weights(self) -> np.ndarray:
        """(units, d) row-major view: flat index = i * grid_height + j."""
        return self.weights.reshape(-1, self.weights.shape[2])


def resolve_iterations(config: SomConfig, n_samples: int) -> int:
    if config.iterations is not None:
        return config.iterations
    return min(AUTO_ITER_PER_SAMPLE * n_samples, AUTO_ITER_CAP)


def _initial_weights(data: np.ndarray, units: int, rng: np.random.Generator) -> np.ndarray:
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    return lo + rng.random((units, data.shape[1])) * (hi - lo)


def train_som(data: np.ndarray, config: SomConfig) -> SomModel:
    """Train a map on (N, d) samples; deterministic for a given seed.

    Weights initialize uniformly at random inside the per-dimension
    [min, max] range of the training data, so "quantization error improves
    over the initialized map" is a meaningful fit diagnostic. Each step
    presents one sample in cyclic order over a seeded shuffle; the BMU and
    its neighborhood move toward the sample by eta(t) * (x - w). Learning
    rate decays linearly to 1% of its initial value, the radius to 1, over
    the step budget.
    """
    config.validate()
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty (N, d) array")
    n, dim = data.shape
    units = config.grid_width * config.grid_height
    rng = np.random.default_rng(config.seed)
    weights = _initial_weights(data, units, rng)
    steps = resolve_iterations(config, n)
    order = rng.permutation(n)[np.arange(steps) % n].astype(np.int64)
    _kernel.train_kernel(
        weights,
        data,
        order,
        config.learning_rate,
        config.learning_rate / 100.0,
        config.initial_radius,
        1.0,
        config.grid_width,
        config.grid_height,
        config.neighborhood == "bubble",
    )
    resolved = replace(config, iterations=steps)
    return SomModel(resolved, weights.reshape(config.grid_width, config.grid_height, dim))


def _check_dim(model: SomModel, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    want = model.input_dim
    got = x.shape[-1]
    if got != want:
        raise ValueError(f"sample dimension {got} does not match map dimension {want}")
    return x


def bmu(model: SomModel, x: np.ndarray) -> tuple[int, int]:
    """Grid coordinates (i, j) of the closest unit by squared Euclidean
    distance; ties break to the lexicographically smallest (i, j)."""
    x = _check_dim(model, x)
    flat = int(_kernel.bmu_batch(model.flat_weights(), x.reshape(1, -1))[0])
    return divmod(flat, model.config.grid_height)


def encode(model: SomModel, x: np.ndarray) -> np.ndarray:
    """Normalized BMU coordinates (i/(W-1), j/(H-1)) in [0, 1]^2."""
    i, j = bmu(model, x)
    return np.array(
        [i / (model.config.grid_width - 1), j / (model.config.grid_height - 1)]
    )


def encode_batch(model: SomModel, x: np.ndarray) -> np.ndarray:
    """(N, 2) normalized BMU coordinates for every row of (N, d) input."""
    x = _check_dim(model, x)
    flat = _kernel.bmu_batch(model.flat_weights(), x)
    i, j = np.divmod(flat, model.config.grid_height)
    return np.column_stack(
        [i / (model.config.grid_width - 1), j / (model.config.grid_height - 1)]
    ).astype(np.float64)


def quantization_error(model: SomModel, data: np.ndarray) -> float:
    """Mean Euclidean distance from samples to their BMU weights."""
    data = _check_dim(model, data)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("quantization_error expects a non-empty (N, d) batch")
    flat = _kernel.bmu_batch(model.flat_weights(), data)
    nearest = model.flat_weights()[flat]
    return float(np.linalg.norm(data - nearest, axis=1).mean())


def initialized_model(data: np.ndarray, config: SomConfig) -> SomModel:
    """The map as train_som would initialize it, before any update step.

    Useful as a baseline for fit diagnostics (quantization error of the
    untrained map).
    """
    config.validate()
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty (N, d) array")
    rng = np.random.default_rng(config.seed)
    units = config.grid_width * config.grid_height
    weights = _initial_weights(data, units, rng)
    return SomModel(config, weights.reshape(config.grid_width, config.grid_height, -1))

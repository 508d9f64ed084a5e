"""Estimation network and GMM machinery.

A small multi-layer net maps each latent vector to soft mixture
memberships (row softmax). Batch memberships then give closed-form GMM
parameters (mixture weights, means, covariances), from which a sample
energy -- the negative log-likelihood under that mixture -- is computed
via Cholesky factorization and log-sum-exp.

Everything exists in two forms: plain numpy for scoring, and tape
versions for training. The energy is a single fused tape primitive with
a hand-derived backward pass; gradient tests pin it against central
finite differences.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import autodiff
from .autodiff import Tape, Var
from .linalg import chol_logdet, regularized_cholesky

GAMMA_FLOOR = 1e-12  # below this total membership a component is degenerate
DEFAULT_COV_EPS = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EstimationConfig:
    """Membership-network shape: latent input, tanh hiddens, K-way output."""

    latent_dim: int = 5
    hidden_sizes: tuple[int, ...] = (10,)
    n_components: int = 4
    dropout: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if any(s < 1 for s in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.n_components < 1:
            raise ValueError("n_components must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class MembershipBatch:
    """Row-stochastic soft memberships and the pre-softmax logits."""

    gamma: np.ndarray  # (N, K)
    logits: np.ndarray  # (N, K)


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights (K,), means (K, d), covariances (K, d, d)."""

    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def n_components(self) -> int:
        return self.phi.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EstimationNet:
    """Tanh hidden layers with inverted dropout, linear K-way output."""

    def __init__(self, config: EstimationConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        sizes = (config.latent_dim, *config.hidden_sizes, config.n_components)
        self.layers = [
            (_glorot(rng, a, b), np.zeros(b)) for a, b in zip(sizes, sizes[1:])
        ]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def dropout_masks(
        self, n_rows: int, rng: np.random.Generator
    ) -> list[np.ndarray]:
        """One inverted-dropout mask per hidden layer: 0 or 1/(1-rate)."""
        rate = self.config.dropout
        masks = []
        for _, b in self.layers[:-1]:
            keep = rng.random((n_rows, b.shape[0])) >= rate
            masks.append(keep.astype(np.float64) / (1.0 - rate))
        return masks

    def _check(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ValueError(
                f"latent dimension {z.shape[-1]} does not match {self.config.latent_dim}"
            )
        return z

    def membership(
        self,
        z: np.ndarray,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
        masks: list[np.ndarray] | None = None,
    ) -> MembershipBatch:
        """Soft memberships for a latent batch.

        Dropout applies only when ``training`` is set and the rate is
        nonzero; the masks then come from ``masks`` or are drawn from
        ``rng``. Scoring always takes the deterministic path.
        """
        z = self._check(z)
        if training and self.config.dropout > 0.0 and masks is None:
            if rng is None:
                raise ValueError("training with dropout needs an rng or masks")
            masks = self.dropout_masks(z.shape[0], rng)
        if not training:
            masks = None
        h = z
        for idx, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if idx < len(self.layers) - 1:
                h = np.tanh(h)
                if masks is not None:
                    h = h * masks[idx]
        gamma = np.exp(h - h.max(axis=1, keepdims=True))
        gamma /= gamma.sum(axis=1, keepdims=True)
        return MembershipBatch(gamma=gamma, logits=h)

    # -- tape path -----------------------------------------------------

    def tape_params(self, tape: Tape) -> list[Var]:
        return [tape.param(a) for a in self.param_arrays()]

    def tape_membership(
        self, params: list[Var], z: Var, masks: list[np.ndarray] | None = None
    ) -> Var:
        """Tape twin of membership(); pass the same masks for parity."""
        h = z
        for idx in range(len(self.layers)):
            h = h @ params[2 * idx] + params[2 * idx + 1]
            if idx < len(self.layers) - 1:
                h = h.tanh()
                if masks is not None:
                    h = h * masks[idx]
        return h.softmax_rows()


def estimate_gmm(
    gamma: np.ndarray, z: np.ndarray, eps: float = DEFAULT_COV_EPS
) -> GmmParams:
    """Membership-weighted mixture weights, means, and covariances.

    phi_k = mean_i gamma_ik; mu_k and Sigma_k are gamma-weighted first and
    second central moments. A component whose total membership falls
    below 1e-12 is degenerate: its mean becomes the batch mean and its
    covariance eps*I, so downstream factorization stays alive.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if gamma.ndim != 2 or z.ndim != 2 or gamma.shape[0] != z.shape[0]:
        raise ValueError(f"incompatible shapes {gamma.shape} and {z.shape}")
    if gamma.shape[0] < 1:
        raise ValueError("need at least one sample")
    n, d = z.shape
    sums = gamma.sum(axis=0)  # (K,)
    phi = sums / n
    dead = sums < GAMMA_FLOOR
    safe = np.where(dead, 1.0, sums)
    mu = (gamma.T @ z) / safe[:, None]  # (K, d)
    dev = z[None, :, :] - mu[:, None, :]  # (K, N, d)
    sigma = np.einsum("kn,knd,kne->kde", gamma.T, dev, dev) / safe[:, None, None]
    if dead.any():
        mu[dead] = z.mean(axis=0)
        sigma[dead] = eps * np.eye(d)
    return GmmParams(phi=phi, mu=mu, sigma=sigma)


def tape_estimate_gmm(
    tape: Tape, gamma: Var, z: Var, eps: float = DEFAULT_COV_EPS
) -> tuple[Var, Var, Var]:
    """Tape twin of estimate_gmm(): (phi, mu, sigma) Vars.

    Degenerate components are swapped for constants (batch mean, eps*I),
    cutting their gradient flow for that step.
    """
    n, d = z.value.shape
    k_total = gamma.value.shape[1]
    phi = gamma.sum(axis=0) * (1.0 / n)
    batch_mean = z.value.mean(axis=0)
    mu_parts: list[Var] = []
    sigma_parts: list[Var] = []
    for k in range(k_total):
        g_k = autodiff.slice_cols(gamma, k, k + 1)  # (N, 1)
        total = g_k.sum()
        if total.value < GAMMA_FLOOR:
            mu_parts.append(tape.constant(batch_mean))
            sigma_parts.append(tape.constant(eps * np.eye(d)))
            continue
        mu_k = (g_k * z).sum(axis=0) / total  # (d,)
        dev = z - mu_k  # (N, d)
        sigma_k = (dev * g_k).T @ dev / total  # (d, d)
        mu_parts.append(mu_k)
        sigma_parts.append(sigma_k)
    return phi, autodiff.stack0(mu_parts), autodiff.stack0(sigma_parts)


def _energy_forward(
    z: np.ndarray, phi: np.ndarray, mu: np.ndarray, sigma: np.ndarray, eps: float
):
    """Shared forward pass; returns energies plus the caches backward needs."""
    n, d = z.shape
    k_total = phi.shape[0]
    if not np.any(phi > 0.0):
        raise ValueError("invalid GMM: all mixture probabilities are zero")
    logs = np.empty((n, k_total))
    a_all = np.empty((k_total, n, d))  # S_k^{-1} (z - mu_k)
    sinv = np.empty((k_total, d, d))
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi)
    for k in range(k_total):
        s_k = 0.5 * (sigma[k] + sigma[k].T)
        l_k = regularized_cholesky(s_k, eps, component=k)
        delta = z - mu[k]  # (N, d)
        # finiteness is policed by regularized_cholesky (covariance) and
        # the caller's objective guard (z), so skip scipy's own scans
        y = solve_triangular(l_k, delta.T, lower=True, check_finite=False)
        quad = np.sum(y * y, axis=0)
        a_all[k] = cho_solve((l_k, True), delta.T, check_finite=False).T
        sinv[k] = cho_solve((l_k, True), np.eye(d), check_finite=False)
        logs[:, k] = log_phi[k] - 0.5 * quad - 0.5 * (chol_logdet(l_k) + d * LOG_2PI)
    m = logs.max(axis=1)
    lse = m + np.log(np.sum(np.exp(logs - m[:, None]), axis=1))
    resp = np.exp(logs - lse[:, None])  # (N, K) responsibilities
    return -lse, resp, a_all, sinv


def energy(z, gmm: GmmParams, eps: float = DEFAULT_COV_EPS):
    """Sample energy: negative log-likelihood under the epsilon-regularized GMM.

    E(z) = -log sum_k phi_k exp(-1/2 d_k' (S_k+eps I)^{-1} d_k) / sqrt|2 pi (S_k+eps I)|
    with d_k = z - mu_k, evaluated via Cholesky factors and log-sum-exp.
    Accepts one vector (-> float) or a batch (N, d) (-> (N,) array).
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if z2.ndim != 2 or z2.shape[1] != gmm.dim:
        raise ValueError(f"latent dimension {z.shape[-1]} does not match {gmm.dim}")
    e, _, _, _ = _energy_forward(z2, gmm.phi, gmm.mu, gmm.sigma, eps)
    return float(e[0]) if single else e


def tape_energy(
    tape: Tape, z: Var, phi: Var, mu: Var, sigma: Var, eps: float = DEFAULT_COV_EPS
) -> Var:
    """Fused energy primitive: per-sample energies (N,) on the tape.

    Backward uses the closed form: with responsibilities r, solve vectors
    a_k = S_k^{-1}(z - mu_k), and w_k = g * r_k,
      dz      = sum_k w_k a_k
      dphi_k  = -(sum_i w_ik) / phi_k
      dmu_k   = -A_k' w_k
      dS_k    = -1/2 A_k' diag(w_k) A_k + 1/2 (sum_i w_ik) S_k^{-1}
    mapped back through the forward symmetrization S = (Sigma+Sigma')/2.
    """
    e, resp, a_all, sinv = _energy_forward(
        z.value, phi.value, mu.value, sigma.value, eps
    )
    k_total = phi.value.shape[0]
    phi_val = phi.value

    def vjp(g):
        w = g[:, None] * resp  # (N, K)
        gz = np.einsum("nk,knd->nd", w, a_all)
        col = w.sum(axis=0)  # (K,)
        with np.errstate(divide="ignore", invalid="ignore"):
            gphi = np.where(phi_val > 0.0, -col / phi_val, 0.0)
        gmu = -np.einsum("knd,nk->kd", a_all, w)
        gsig = np.empty_like(sinv)
        for k in range(k_total):
            gs = -0.5 * (a_all[k] * w[:, k, None]).T @ a_all[k]
            gs += 0.5 * col[k] * sinv[k]
            gsig[k] = 0.5 * (gs + gs.T)
        return gz, gphi, gmu, gsig

    return tape.custom(e, [z, phi, mu, sigma], vjp)


def cov_penalty(gmm: GmmParams) -> float:
    """Sum of reciprocal covariance diagonals; explodes as any variance -> 0."""
    diag = np.diagonal(gmm.sigma, axis1=1, axis2=2)
    if np.any(diag == 0.0):
        raise OverflowError("covariance diagonal entry is zero; penalty undefined")
    return float(np.sum(1.0 / diag))


def tape_cov_penalty(tape: Tape, sigma: Var) -> Var:
    """Tape twin of cov_penalty over a stacked (K, d, d) covariance Var."""
    diag = np.diagonal(sigma.value, axis1=1, axis2=2)
    if np.any(diag == 0.0):
        raise OverflowError("covariance diagonal entry is zero; penalty undefined")
    value = np.asarray(np.sum(1.0 / diag))

    def vjp(g):
        grad = np.zeros_like(sigma.value)
        k_total, d = diag.shape
        idx = np.arange(d)
        for k in range(k_total):
            grad[k, idx, idx] = -float(g) / (diag[k] ** 2)
        return (grad,)

    return tape.custom(value, [sigma], vjp)

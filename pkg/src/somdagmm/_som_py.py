"""Pure-numpy SOM kernels: fallback twin of the compiled _som_core extension.

Same call signatures and semantics as the Cython module; selected at import
time by :mod:`somdagmm.som` when the extension is unavailable or when
SOMDAGMM_PURE_PYTHON is set. Per-backend results are deterministic, but the
two backends may differ in last-ulp rounding (different summation order in
the distance accumulation).
"""

import numpy as np


def train_kernel(
    weights: np.ndarray,
    data: np.ndarray,
    order: np.ndarray,
    eta0: float,
    eta_end: float,
    rad0: float,
    rad_end: float,
    grid_w: int,
    grid_h: int,
    bubble: bool,
) -> None:
    """Run competitive-learning steps, updating ``weights`` (U, d) in place.

    Step t presents sample ``data[order[t]]``, finds the best matching unit
    by squared Euclidean distance (ties: lowest flat index), and pulls the
    neighborhood toward the sample: uniformly within Chebyshev grid radius
    for the bubble kernel, Gaussian-weighted over the whole grid otherwise.
    Learning rate and radius decay linearly from their initial to final
    values over the step budget.
    """
    steps = order.shape[0]
    units = weights.shape[0]
    gi, gj = np.divmod(np.arange(units), grid_h)
    denom = max(steps - 1, 1)
    for t in range(steps):
        x = data[order[t]]
        diff = weights - x
        d2 = np.einsum("ud,ud->u", diff, diff)
        best = int(np.argmin(d2))
        frac = t / denom
        eta = eta0 + (eta_end - eta0) * frac
        rad = rad0 + (rad_end - rad0) * frac
        bi, bj = divmod(best, grid_h)
        if bubble:
            inside = np.maximum(np.abs(gi - bi), np.abs(gj - bj)) <= rad
            weights[inside] += eta * (x - weights[inside])
        else:
            g2 = (gi - bi) ** 2 + (gj - bj) ** 2
            h = eta * np.exp(-g2 / (2.0 * rad * rad))
            weights += h[:, None] * (x - weights)


def bmu_batch(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Flat best-matching-unit index for every row of ``x`` (N, d).

    Ties resolve to the lowest flat index. Chunked so the (chunk, U, d)
    distance tensor stays small.
    """
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(weights.size, 1)))
    for start in range(0, n, chunk):
        block = x[start : start + chunk]
        diff = block[:, None, :] - weights[None, :, :]
        d2 = np.einsum("nud,nud->nu", diff, diff)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out

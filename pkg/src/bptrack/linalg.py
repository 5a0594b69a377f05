"""Dense 2x2 linear algebra, samplers, and keyed random streams.

Conventions used across the package: kinematic vectors are shape (4,)
arrays ordered [px, vx, py, vy]; extents are 2x2 symmetric positive
definite arrays. Batched helpers take a leading axis and are preferred in
hot paths.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.linalg import solve_triangular

_MASK64 = (1 << 64) - 1
_LOG_2PI = float(np.log(2.0 * np.pi))


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _key_to_int(key) -> int:
    if isinstance(key, (bool, float)):
        raise TypeError(f"stream keys must be ints, strings or tuples, got {key!r}")
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        # md5 is stable across processes, unlike hash() with randomized seeds
        digest = hashlib.md5(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    if isinstance(key, tuple):
        acc = 0x243F6A8885A308D3
        for part in key:
            acc = _splitmix64(acc ^ _key_to_int(part))
        return acc
    raise TypeError(f"stream keys must be ints, strings or tuples, got {key!r}")


class RngStream:
    """Deterministic random stream addressed by a (seed, stream) pair.

    Two streams with the same (seed, stream) produce identical draws.
    ``derive`` builds child streams from hashable keys, so independent parts
    of a computation can be given stable, content-addressed randomness that
    does not shift when unrelated parts consume more or fewer draws.
    """

    __slots__ = ("seed", "stream", "_gen")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = None

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.seed, self.stream], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def derive(self, *keys) -> "RngStream":
        acc = self.stream
        for key in keys:
            acc = _splitmix64(acc ^ _key_to_int(key))
        return RngStream(self.seed, acc)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Entrywise symmetric part, (M + M.T) / 2. Works on batches."""
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def check_spd2(mat, atol: float = 1e-9) -> np.ndarray:
    """Validate a single 2x2 symmetric positive definite matrix."""
    m = np.asarray(mat, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    scale = max(abs(m).max(), 1.0)
    if abs(m[0, 1] - m[1, 0]) > atol * scale:
        raise ValueError("matrix is not symmetric")
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if m[0, 0] <= 0.0 or det <= 0.0:
        raise ValueError("matrix is not positive definite")
    return m


def spd_sqrt(mat) -> np.ndarray:
    """Principal square root of a 2x2 SPD matrix, in closed form.

    For 2x2 SPD M the unique SPD root is (M + sqrt(det M) I) / sqrt(tr M +
    2 sqrt(det M)). Raises ValueError on non-SPD input.
    """
    m = check_spd2(mat)
    s = np.sqrt(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    return (m + s * np.eye(2)) / np.sqrt(m[0, 0] + m[1, 1] + 2.0 * s)


def spd_sqrt_batch(mats: np.ndarray) -> np.ndarray:
    """Vectorized ``spd_sqrt`` over a (N, 2, 2) stack. Inputs are trusted."""
    m = np.asarray(mats, dtype=float)
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if np.any(det <= 0.0) or np.any(m[..., 0, 0] <= 0.0):
        raise ValueError("batch contains a non positive definite matrix")
    s = np.sqrt(det)
    tr = m[..., 0, 0] + m[..., 1, 1]
    out = m + s[..., None, None] * np.eye(2)
    out /= np.sqrt(tr + 2.0 * s)[..., None, None]
    return out


def chol2_batch(mats: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a (N, 2, 2) SPD stack, in closed form."""
    m = np.asarray(mats, dtype=float)
    a = m[..., 0, 0]
    b = m[..., 1, 0]
    c = m[..., 1, 1]
    if np.any(a <= 0.0):
        raise ValueError("batch contains a non positive definite matrix")
    l11 = np.sqrt(a)
    l21 = b / l11
    inner = c - l21 * l21
    if np.any(inner <= 0.0):
        raise ValueError("batch contains a non positive definite matrix")
    out = np.zeros(m.shape, dtype=float)
    out[..., 0, 0] = l11
    out[..., 1, 0] = l21
    out[..., 1, 1] = np.sqrt(inner)
    return out


def gaussian_logpdf(x, mean, cov) -> np.ndarray | float:
    """Log density of N(mean, cov) at x.

    x may be a single point (d,) or a batch (..., d); the result follows the
    batch shape. Raises ValueError when cov is not positive definite.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise ValueError("covariance is not positive definite") from err
    diff = x - mean
    sol = _forward_sub(chol, diff)
    quad = np.sum(sol * sol, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (d * _LOG_2PI + logdet + quad)
    if out.ndim == 0:
        return float(out)
    return out


def _forward_sub(chol: np.ndarray, diff: np.ndarray) -> np.ndarray:
    """Solve L y = diff with L lower triangular, diff shaped (..., d)."""
    flat = diff.reshape(-1, diff.shape[-1])
    sol = solve_triangular(chol, flat.T, lower=True).T
    return sol.reshape(diff.shape)


def sample_gaussian(mean, cov, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, cov). A zero covariance returns the mean exactly."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        if size is None:
            return mean.copy()
        return np.tile(mean, (size, 1))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise ValueError("covariance is not positive definite") from err
    d = mean.shape[0]
    if size is None:
        return mean + chol @ rng.gen.standard_normal(d)
    return mean + rng.gen.standard_normal((size, d)) @ chol.T


def sample_gaussian_batch(means: np.ndarray, cov, rng: RngStream) -> np.ndarray:
    """One draw per row of means (N, d), sharing the covariance."""
    means = np.asarray(means, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return means.copy()
    chol = np.linalg.cholesky(cov)
    noise = rng.gen.standard_normal(means.shape)
    return means + noise @ chol.T


def sample_wishart(scale, dof: float, rng: RngStream) -> np.ndarray:
    """Draw a 2x2 Wishart matrix with E[W] = dof * scale.

    Uses the Bartlett decomposition; requires dof >= 2 so the second
    diagonal chi-square has positive degrees of freedom.
    """
    out = sample_wishart_batch(np.asarray(scale, dtype=float)[None], dof, rng)
    return out[0]


def sample_wishart_batch(scales: np.ndarray, dof, rng: RngStream) -> np.ndarray:
    """Vectorized 2x2 Wishart draws, one per scale matrix in (N, 2, 2)."""
    scales = np.asarray(scales, dtype=float)
    dof = np.asarray(dof, dtype=float)
    if np.any(dof < 2.0):
        raise ValueError("wishart degrees of freedom must be at least 2")
    n = scales.shape[0]
    chol = chol2_batch(scales)
    a11 = np.sqrt(rng.gen.chisquare(np.broadcast_to(dof, (n,))))
    a22 = np.sqrt(rng.gen.chisquare(np.broadcast_to(dof - 1.0, (n,))))
    a21 = rng.gen.standard_normal(n)
    # M = chol @ A with A lower triangular Bartlett factor
    m11 = chol[:, 0, 0] * a11
    m21 = chol[:, 1, 0] * a11 + chol[:, 1, 1] * a21
    m22 = chol[:, 1, 1] * a22
    out = np.empty_like(scales)
    out[:, 0, 0] = m11 * m11
    out[:, 0, 1] = m11 * m21
    out[:, 1, 0] = out[:, 0, 1]
    out[:, 1, 1] = m21 * m21 + m22 * m22
    return out


def sample_inverse_wishart(mean, dof: float, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw 2x2 inverse-Wishart matrices parameterized by their mean.

    The scale matrix is recovered as mean * (dof - 3); dof must exceed 3 for
    the mean to exist, otherwise ValueError is raised.
    """
    if dof <= 3.0:
        raise ValueError("inverse-wishart mean requires dof > 3")
    mean = check_spd2(mean)
    psi = mean * (dof - 3.0)
    psi_inv = np.linalg.inv(psi)
    n = 1 if size is None else size
    draws = sample_wishart_batch(np.broadcast_to(psi_inv, (n, 2, 2)), dof, rng)
    inv = np.linalg.inv(draws)
    inv = symmetrize(inv)
    if size is None:
        return inv[0]
    return inv


def sample_poisson(rate: float, rng: RngStream) -> int:
    if rate < 0.0:
        raise ValueError("poisson rate must be nonnegative")
    return int(rng.gen.poisson(rate))


def sample_categorical(weights, rng: RngStream, size: int | None = None):
    """Sample indices proportional to nonnegative weights.

    Raises ValueError when the weights are empty, negative, non-finite, or
    sum to zero. Entries with zero weight are never selected.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights sum to zero")
    cum = np.cumsum(w)
    u = rng.gen.random(size) * total
    idx = np.searchsorted(cum, u, side="right")
    idx = np.minimum(idx, w.size - 1)
    if size is None:
        return int(idx)
    return idx


def systematic_resample(weights, n: int, rng: RngStream) -> np.ndarray:
    """Systematic resampling: n indices with counts in [floor(n w), ceil(n w)].

    A single uniform offset is stratified across n slots, so the draw is
    low-variance and each index i appears between floor(n w_i) and
    ceil(n w_i) times.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights sum to zero")
    if n <= 0:
        raise ValueError("sample count must be positive")
    positions = (rng.gen.random() + np.arange(n)) / n
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def effective_sample_size(weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2; scale invariant, equals N for uniform weights."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0.0:
        return 0.0
    return float(total * total / np.sum(w * w))

"""Single-object motion, measurement, birth, clutter, and survival models.

The object state pairs a nearly constant velocity kinematic vector
[px, vx, py, vy] with a 2x2 SPD extent matrix. Measurements are noisy point
detections spread over the extent; the number of detections per object and
step is Poisson. Batched helpers are the ones used in hot paths.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import RngStream

KIN_DIM = 4
POS_IDX = np.array([0, 2])
VEL_IDX = np.array([1, 3])

# picks (px, py) out of the kinematic vector
MEAS_MATRIX = np.kron(np.eye(2), np.array([[1.0, 0.0]]))

_LOG_2PI = float(np.log(2.0 * np.pi))


def kinematic_transition(ts: float) -> np.ndarray:
    return np.kron(np.eye(2), np.array([[1.0, ts], [0.0, 1.0]]))


def kinematic_noise(ts: float, sigma_q: float) -> np.ndarray:
    block = np.array([[ts**3 / 3.0, ts**2 / 2.0], [ts**2 / 2.0, ts]])
    return sigma_q**2 * np.kron(np.eye(2), block)


@dataclass
class ObjectState:
    """Kinematic vector [px, vx, py, vy] plus 2x2 SPD extent."""

    kin: np.ndarray
    extent: np.ndarray

    def __post_init__(self):
        self.kin = np.asarray(self.kin, dtype=float)
        self.extent = np.asarray(self.extent, dtype=float)

    @property
    def position(self) -> np.ndarray:
        return self.kin[POS_IDX]

    @property
    def velocity(self) -> np.ndarray:
        return self.kin[VEL_IDX]


@dataclass
class ModelParams:
    """Model constants. Treat instances as immutable; use dataclasses.replace.

    ts: sampling period [s]
    sigma_q: acceleration noise deviation
    q: extent Wishart degrees of freedom (larger = stiffer extent)
    rho: extent-to-measurement-spread scaling
    sigma_r: measurement noise deviation
    gamma: mean detections per object per step
    p_survival: per-step survival probability
    birth_rate: expected new objects per step
    birth_velocity_cov: per-axis velocity variance in the birth density
    birth_extent_mean / birth_extent_dof: inverse-Wishart birth extent prior
    clutter_rate: expected clutter points per step, uniform over the region
    region: ((xmin, xmax), (ymin, ymax)) surveillance area
    """

    ts: float = 0.2
    sigma_q: float = 1.0
    q: float = 1000.0
    rho: float = 1.0
    sigma_r: float = 1.0
    gamma: float = 5.0
    p_survival: float = 0.99
    birth_rate: float = 0.01
    birth_velocity_cov: float = 100.0
    birth_extent_mean: np.ndarray = None
    birth_extent_dof: float = 1000.0
    clutter_rate: float = 10.0
    region: tuple = ((-150.0, 150.0), (-150.0, 150.0))

    def __post_init__(self):
        if self.birth_extent_mean is None:
            self.birth_extent_mean = 9.0 * np.eye(2)
        self.birth_extent_mean = np.asarray(self.birth_extent_mean, dtype=float)
        self.f_mat = kinematic_transition(self.ts)
        self.q_mat = kinematic_noise(self.ts, self.sigma_q)
        self.meas_noise = self.sigma_r**2 * np.eye(2)

    @property
    def area(self) -> float:
        (x0, x1), (y0, y1) = self.region
        return (x1 - x0) * (y1 - y0)

    def replace(self, **kwargs) -> "ModelParams":
        clean = {k: v for k, v in dataclasses.asdict(self).items()
                 if k in self.__dataclass_fields__}
        clean.update(kwargs)
        return ModelParams(**clean)


def survival(state, params: ModelParams) -> float:
    return params.p_survival


def measurement_rate(state, params: ModelParams) -> float:
    return params.gamma


def effective_pd(state, params: ModelParams) -> float:
    """Probability of at least one detection, 1 - exp(-gamma)."""
    return 1.0 - float(np.exp(-params.gamma))


def transition_sample(state: ObjectState, params: ModelParams, rng: RngStream) -> ObjectState:
    kin = linalg.sample_gaussian(params.f_mat @ state.kin, params.q_mat, rng)
    extent = linalg.sample_wishart(state.extent / params.q, params.q, rng)
    return ObjectState(kin, extent)


def transition_sample_batch(kins: np.ndarray, extents: np.ndarray,
                            params: ModelParams, rng: RngStream):
    """One-step transition for N particles; returns (kins, extents)."""
    means = kins @ params.f_mat.T
    new_kins = linalg.sample_gaussian_batch(means, params.q_mat, rng)
    new_extents = linalg.sample_wishart_batch(extents / params.q, params.q, rng)
    return new_kins, new_extents


def transition_logpdf_kinematic(kin_next, kin_prev, params: ModelParams):
    """Log transition density of the kinematic part; broadcasts over batches."""
    kin_next = np.asarray(kin_next, dtype=float)
    kin_prev = np.asarray(kin_prev, dtype=float)
    diff = kin_next - kin_prev @ params.f_mat.T
    return linalg.gaussian_logpdf(diff, np.zeros(KIN_DIM), params.q_mat)


def meas_logpdf(z, state: ObjectState, params: ModelParams) -> float:
    cov = params.rho * state.extent + params.meas_noise
    return float(linalg.gaussian_logpdf(z, MEAS_MATRIX @ state.kin, cov))


def meas_loglik_matrix(kins: np.ndarray, extents: np.ndarray, zs: np.ndarray,
                       params: ModelParams) -> np.ndarray:
    """Log single-measurement likelihoods for L particles x M measurements.

    Returns an (L, M) array. The 2x2 solves are done in closed form, which
    is what keeps the per-step update affordable.
    """
    kins = np.asarray(kins, dtype=float)
    extents = np.asarray(extents, dtype=float)
    zs = np.asarray(zs, dtype=float).reshape(-1, 2)
    s11 = params.rho * extents[:, 0, 0] + params.sigma_r**2
    s12 = params.rho * extents[:, 0, 1]
    s22 = params.rho * extents[:, 1, 1] + params.sigma_r**2
    det = s11 * s22 - s12 * s12
    dx = zs[None, :, 0] - kins[:, None, 0]
    dy = zs[None, :, 1] - kins[:, None, 2]
    quad = (s22[:, None] * dx * dx - 2.0 * s12[:, None] * dx * dy
            + s11[:, None] * dy * dy) / det[:, None]
    return -_LOG_2PI - 0.5 * np.log(det)[:, None] - 0.5 * quad


def set_meas_loglik(zs, state: ObjectState, params: ModelParams, alive: bool = True) -> float:
    """Log likelihood of a measurement set for one trajectory.

    An alive object generates each point independently with rate gamma; a
    dead (or absent) one generates the empty set with probability one.
    """
    zs = np.asarray(zs, dtype=float).reshape(-1, 2)
    if not alive:
        return 0.0 if zs.shape[0] == 0 else -np.inf
    out = -params.gamma
    if zs.shape[0]:
        lls = meas_loglik_matrix(state.kin[None], state.extent[None], zs, params)[0]
        out += float(np.sum(np.log(params.gamma) + lls))
    return out


def in_region(zs: np.ndarray, params: ModelParams) -> np.ndarray:
    zs = np.asarray(zs, dtype=float).reshape(-1, 2)
    (x0, x1), (y0, y1) = params.region
    return ((zs[:, 0] >= x0) & (zs[:, 0] <= x1)
            & (zs[:, 1] >= y0) & (zs[:, 1] <= y1))


def clutter_logintensity(z, params: ModelParams):
    """Log clutter intensity at z: uniform over the region, -inf outside."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    inside = in_region(z.reshape(-1, 2), params)
    out = np.where(inside, np.log(params.clutter_rate / params.area), -np.inf)
    if single:
        return float(out[0])
    return out


def birth_sample(params: ModelParams, rng: RngStream, size: int):
    """Draw size birth states: uniform position, Gaussian velocity, IW extent."""
    (x0, x1), (y0, y1) = params.region
    kins = np.empty((size, KIN_DIM))
    kins[:, 0] = rng.gen.uniform(x0, x1, size)
    kins[:, 2] = rng.gen.uniform(y0, y1, size)
    vel = rng.gen.standard_normal((size, 2)) * np.sqrt(params.birth_velocity_cov)
    kins[:, 1] = vel[:, 0]
    kins[:, 3] = vel[:, 1]
    extents = linalg.sample_inverse_wishart(params.birth_extent_mean,
                                            params.birth_extent_dof, rng, size=size)
    return kins, extents

"""Scenario synthesis: crossing-object ground truth and sensor frames.

Objects start uniformly spaced on a circle and head toward its center, so
every pair passes close to the origin near mid-run. Appearance and
disappearance happen in pairs on a fixed schedule; each object keeps the
extent it was born with. Measurement frames contain a Poisson number of
detections per present object plus uniform clutter, in shuffled order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .linalg import RngStream
from .metrics import TrajectoryRecord
from .models import ModelParams, ObjectState

__all__ = [
    "ScenarioConfig",
    "generate_scenario",
    "generate_measurements",
]


@dataclass
class ScenarioConfig:
    """Scenario and Monte Carlo layout.

    ``appear_steps`` and ``disappear_steps`` are paired object-by-object:
    objects 2i and 2i+1 both appear at ``appear_steps[i]`` and disappear at
    ``disappear_steps[i]``. ``seeds`` holds explicit run seeds; when fewer
    seeds than runs are given the missing ones are derived from the first.
    """

    n_objects: int = 10
    circle_radius: float = 75.0
    initial_speed: float = 10.0
    appear_steps: tuple = (3, 6, 9, 12, 15)
    disappear_steps: tuple = (83, 86, 89, 92, 95)
    k_steps: int = 100
    model: ModelParams = field(default_factory=ModelParams)
    gamma_grid: tuple = (3.0, 5.0, 7.0)
    seeds: tuple = (0,)
    runs: int = 20
    noisy_truth: bool = True

    def __post_init__(self):
        self.appear_steps = tuple(int(s) for s in self.appear_steps)
        self.disappear_steps = tuple(int(s) for s in self.disappear_steps)
        self.gamma_grid = tuple(float(g) for g in self.gamma_grid)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.n_objects < 1:
            raise ValueError("n_objects must be positive")
        if len(self.appear_steps) != len(self.disappear_steps):
            raise ValueError("appear_steps and disappear_steps must pair up")
        if 2 * len(self.appear_steps) < self.n_objects:
            raise ValueError(
                f"{len(self.appear_steps)} appearance pairs cannot cover "
                f"{self.n_objects} objects")
        if any(s < 1 for s in self.appear_steps):
            raise ValueError("appearance steps must be 1-based time steps")
        for a, d in zip(self.appear_steps, self.disappear_steps):
            if d <= a:
                raise ValueError(f"disappearance step {d} not after "
                                 f"appearance step {a}")
        if self.k_steps < max(self.disappear_steps):
            raise ValueError("k_steps must reach the last disappearance")
        if self.runs < 1:
            raise ValueError("runs must be positive")
        if not self.gamma_grid:
            raise ValueError("gamma_grid must not be empty")
        if not self.seeds:
            raise ValueError("seeds must not be empty")

    def run_seeds(self) -> tuple:
        """One seed per run, deriving extras from the first seed."""
        if len(self.seeds) >= self.runs:
            return self.seeds[:self.runs]
        base = RngStream(self.seeds[0])
        extra = tuple(
            int(base.derive("run-seed", i).gen.integers(0, 2 ** 63))
            for i in range(len(self.seeds), self.runs))
        return self.seeds + extra


def generate_scenario(cfg: ScenarioConfig, rng: RngStream) -> list:
    """Draw one ground-truth realization as a list of trajectory records.

    Object i starts on the circle at angle 2*pi*i/n with velocity pointing
    at the center, on its scheduled appearance step. Extents are drawn once
    per object from the model's birth extent prior and stay fixed; the
    kinematic state follows the model dynamic, with process noise unless
    ``cfg.noisy_truth`` is off.
    """
    params = cfg.model
    records = []
    for i in range(cfg.n_objects):
        angle = 2.0 * np.pi * i / cfg.n_objects
        direction = np.array([np.cos(angle), np.sin(angle)])
        pos = cfg.circle_radius * direction
        vel = -cfg.initial_speed * direction
        kin = np.array([pos[0], vel[0], pos[1], vel[1]])
        extent = linalg.sample_inverse_wishart(
            params.birth_extent_mean, params.birth_extent_dof,
            rng.derive("extent", i))
        appear = cfg.appear_steps[i // 2]
        disappear = cfg.disappear_steps[i // 2]
        walk = rng.derive("walk", i)
        states = [ObjectState(kin, extent)]
        for _ in range(appear + 1, disappear + 1):
            kin = params.f_mat @ kin
            if cfg.noisy_truth:
                kin = linalg.sample_gaussian(kin, params.q_mat, walk)
            states.append(ObjectState(kin, extent))
        records.append(TrajectoryRecord(appear, states, id=i))
    return records


def generate_measurements(truth: list, params: ModelParams, k_steps: int,
                          rng: RngStream) -> list:
    """Synthesize one measurement frame per step for 1 .. k_steps.

    Each present object contributes Poisson(gamma) detections around its
    position with covariance rho*extent + measurement noise; the frame also
    carries Poisson(clutter_rate) uniform clutter and is shuffled so
    detection order carries no information.
    """
    (x_lo, x_hi), (y_lo, y_hi) = params.region
    frames = []
    for k in range(1, k_steps + 1):
        step_rng = rng.derive("frame", k)
        chunks = []
        for rec in truth:
            state = rec.state_at(k)
            if state is None:
                continue
            n_det = step_rng.derive("count", rec.id).gen.poisson(params.gamma)
            if n_det == 0:
                continue
            cov = params.rho * state.extent + params.meas_noise
            zs = linalg.sample_gaussian(state.position, cov,
                                        step_rng.derive("det", rec.id),
                                        size=n_det)
            chunks.append(zs)
        n_clutter = step_rng.derive("clutter").gen.poisson(params.clutter_rate)
        if n_clutter:
            u = step_rng.derive("clutter-pos").gen.random((n_clutter, 2))
            clutter = np.column_stack([x_lo + (x_hi - x_lo) * u[:, 0],
                                       y_lo + (y_hi - y_lo) * u[:, 1]])
            chunks.append(clutter)
        if chunks:
            frame = np.concatenate(chunks, axis=0)
            step_rng.derive("shuffle").gen.shuffle(frame, axis=0)
        else:
            frame = np.zeros((0, 2))
        frames.append(frame)
    return frames

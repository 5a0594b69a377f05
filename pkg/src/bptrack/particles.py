"""Shared containers: weighted trajectory particles and PMB densities.

A trajectory particle is summarized by its birth step, the step of its last
state, and that last state; per-step histories live in the stored marginal
snapshots kept by the filter, not here. A particle is alive at step k when
its end equals k, and dead (its trajectory ended earlier) otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KIN_DIM = 4


@dataclass
class TrajectoryParticles:
    """Struct-of-arrays particle set: start/end steps, last state, weight."""

    start: np.ndarray
    end: np.ndarray
    kin: np.ndarray
    extent: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=int)
        self.end = np.asarray(self.end, dtype=int)
        self.kin = np.asarray(self.kin, dtype=float).reshape(-1, KIN_DIM)
        self.extent = np.asarray(self.extent, dtype=float).reshape(-1, 2, 2)
        self.w = np.asarray(self.w, dtype=float)

    @classmethod
    def empty(cls) -> "TrajectoryParticles":
        return cls(np.zeros(0, dtype=int), np.zeros(0, dtype=int),
                   np.zeros((0, KIN_DIM)), np.zeros((0, 2, 2)), np.zeros(0))

    @classmethod
    def fresh(cls, step: int, kin: np.ndarray, extent: np.ndarray,
              w: np.ndarray) -> "TrajectoryParticles":
        """Length-one trajectories all starting (and alive) at step."""
        n = len(w)
        steps = np.full(n, step, dtype=int)
        return cls(steps, steps.copy(), kin, extent, w)

    @property
    def size(self) -> int:
        return self.w.size

    def alive_mask(self, step: int) -> np.ndarray:
        return self.end == step

    def subset(self, idx) -> "TrajectoryParticles":
        return TrajectoryParticles(self.start[idx], self.end[idx],
                                   self.kin[idx], self.extent[idx], self.w[idx])

    def copy(self) -> "TrajectoryParticles":
        return TrajectoryParticles(self.start.copy(), self.end.copy(),
                                   self.kin.copy(), self.extent.copy(), self.w.copy())

    def reweighted(self, w: np.ndarray) -> "TrajectoryParticles":
        return TrajectoryParticles(self.start, self.end, self.kin, self.extent,
                                   np.asarray(w, dtype=float))

    @staticmethod
    def concat(parts: list["TrajectoryParticles"]) -> "TrajectoryParticles":
        parts = [p for p in parts if p.size]
        if not parts:
            return TrajectoryParticles.empty()
        return TrajectoryParticles(
            np.concatenate([p.start for p in parts]),
            np.concatenate([p.end for p in parts]),
            np.concatenate([p.kin for p in parts]),
            np.concatenate([p.extent for p in parts]),
            np.concatenate([p.w for p in parts]))


class PppHistory:
    """Ragged per-particle state histories for the undetected-object PPP.

    Only maintained when new components copy PPP particles, so that a
    component born from trajectories that started in the past can seed its
    per-step marginal snapshots retroactively. Row l of the history aligns
    with particle l of the PPP.
    """

    def __init__(self):
        self.kin: list[np.ndarray] = []
        self.ext: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.kin)

    def advance(self, survivor_idx: np.ndarray, new_kin: np.ndarray,
                new_ext: np.ndarray, birth_kin: np.ndarray, birth_ext: np.ndarray):
        kin = []
        ext = []
        for pos, l in enumerate(survivor_idx):
            kin.append(np.vstack([self.kin[l], new_kin[pos]]))
            ext.append(np.concatenate([self.ext[l], new_ext[pos][None]], axis=0))
        for row, mat in zip(birth_kin, birth_ext):
            kin.append(row[None].copy())
            ext.append(mat[None].copy())
        self.kin = kin
        self.ext = ext

    def subset(self, idx) -> "PppHistory":
        out = PppHistory()
        out.kin = [self.kin[l] for l in idx]
        out.ext = [self.ext[l] for l in idx]
        return out


@dataclass
class BernoulliComponent:
    """A potential trajectory: existence probability plus particle cloud.

    The id is the (birth step, measurement index) pair of the first
    detection, stable across filter variants fed the same measurements.
    """

    id: tuple
    r: float
    particles: TrajectoryParticles

    def alive_mass(self, step: int) -> float:
        alive = self.particles.alive_mask(step)
        total = self.particles.w.sum()
        if total <= 0.0:
            return 0.0
        return float(self.particles.w[alive].sum() / total)

    def current_state_belief(self, step: int):
        """Existence probability and normalized weights restricted to the
        alive-at-step trajectories; the current-step object marginal."""
        alive = self.particles.alive_mask(step)
        mass = self.particles.w[alive].sum()
        if mass <= 0.0:
            return 0.0, self.particles.subset(alive)
        total = self.particles.w.sum()
        sub = self.particles.subset(alive)
        return float(self.r * mass / total), sub.reweighted(sub.w / mass)


@dataclass
class PmbDensity:
    """Poisson multi-Bernoulli density over trajectories at one time step.

    The undetected-object intensity is either a weighted particle set (ppp)
    or, in scalar mode, an expected count with an implied uniform spatial
    profile over the region paired with the birth priors (ppp_scalar).
    """

    step: int
    components: list = field(default_factory=list)
    ppp: TrajectoryParticles | None = None
    ppp_scalar: float | None = None
    ppp_hist: PppHistory | None = None

    @property
    def scalar_mode(self) -> bool:
        return self.ppp_scalar is not None

    def undetected_count(self) -> float:
        if self.scalar_mode:
            return float(self.ppp_scalar)
        if self.ppp is None:
            return 0.0
        return float(self.ppp.w.sum())

"""Exhaustive association update for small extended-object problems.

Enumerates every division of a frame's measurements among existing
potential objects, newly detected objects, and clutter, yielding the full
mixture over association hypotheses (a multi-Bernoulli mixture) plus its
projection back to a single multi-Bernoulli. Everything is exponential in
the measurement count, so inputs are hard-capped; the fast BP update is
validated against this module on small cases.

Local hypothesis ordering is part of the contract here: for a prior
component, index 0 is the misdetection hypothesis and index b > 0 is the
detection hypothesis whose measurement cell is the bitmask b (bit j set
means measurement j belongs to the cell). For the new component anchored
at measurement j, index 0 means "no new object" and index i > 0 covers the
cell with bitmask (1 << j) | (i - 1), i.e. all cells whose highest
measurement index is j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import models
from .models import ModelParams
from .particles import BernoulliComponent, PmbDensity, TrajectoryParticles

MAX_MEASUREMENTS = 6
MAX_COMPONENTS = 4


@dataclass
class LocalHypothesis:
    """One association outcome for one component.

    particles always spans the parent component's full particle support so
    that mixtures over local hypotheses reduce to weight arithmetic; rows
    incompatible with the hypothesis carry zero weight.
    """

    log_weight: float
    existence: float
    particles: TrajectoryParticles
    meas_pairs: frozenset


@dataclass
class ExactComponent:
    origin: tuple
    locals: list


@dataclass
class GlobalHypothesis:
    choice: tuple
    log_weight: float
    weight: float


@dataclass
class PmbmDensity:
    step: int
    components: list
    globals_: list
    ppp: TrajectoryParticles | None


def _cell_pairs(step: int, mask: int) -> frozenset:
    return frozenset((step, j) for j in range(mask.bit_length()) if mask >> j & 1)


def _cell_log_masses(log_w: np.ndarray, loglik: np.ndarray, gamma: float,
                     masks) -> dict:
    """log sum_l w_l * exp(-gamma) prod_{j in mask} gamma * l(z_j|x_l).

    Also returns the per-particle log weights for each mask, keyed by mask.
    """
    out = {}
    for mask in masks:
        cols = [j for j in range(loglik.shape[1]) if mask >> j & 1]
        lw = log_w - gamma + np.sum(np.log(gamma) + loglik[:, cols], axis=1)
        out[mask] = lw
    return out


def update_exact(predicted: PmbDensity, zs, params: ModelParams,
                 max_meas: int = MAX_MEASUREMENTS,
                 max_comps: int = MAX_COMPONENTS) -> PmbmDensity:
    """Measurement update by full hypothesis enumeration.

    predicted must be a particle-PPP density (scalar undetected mode is not
    supported here) whose step matches the frame being processed. Raises
    ValueError when the measurement count or component count exceeds the
    caps; the hypothesis count grows super-exponentially past them.
    """
    zs = np.asarray(zs, dtype=float).reshape(-1, 2)
    m = zs.shape[0]
    if m > max_meas:
        raise ValueError(f"{m} measurements exceed the exact-update cap {max_meas}")
    if len(predicted.components) > max_comps:
        raise ValueError(f"{len(predicted.components)} components exceed the cap {max_comps}")
    if predicted.scalar_mode:
        raise ValueError("exact update requires a particle undetected-object intensity")
    step = predicted.step
    gamma = params.gamma

    components = []
    for comp in predicted.components:
        parts = comp.particles
        total = parts.w.sum()
        if total <= 0.0:
            raise ValueError("component particle weights must have positive sum")
        norm_w = parts.w / total
        alive = parts.alive_mask(step)
        with np.errstate(divide="ignore"):
            log_w_full = np.log(norm_w)
        locals_ = []
        # misdetection: alive trajectories emit nothing (factor e^-gamma),
        # dead ones are unaffected
        lw_mis = log_w_full + np.where(alive, -gamma, 0.0)
        log_mis = logsumexp(lw_mis) if parts.size else -np.inf
        r = float(comp.r)
        log_hyp_mis = np.logaddexp(
            np.log1p(-r) if r < 1.0 else -np.inf,
            (np.log(r) if r > 0.0 else -np.inf) + log_mis)
        exist_mis = 0.0 if log_hyp_mis == -np.inf else float(
            np.exp((np.log(r) if r > 0.0 else -np.inf) + log_mis - log_hyp_mis))
        locals_.append(LocalHypothesis(
            float(log_hyp_mis), exist_mis,
            parts.reweighted(np.exp(lw_mis - logsumexp(lw_mis)) if parts.size else parts.w),
            frozenset()))
        if m:
            alive_idx = np.where(alive)[0]
            loglik = models.meas_loglik_matrix(parts.kin[alive_idx],
                                               parts.extent[alive_idx], zs, params)
            masses = _cell_log_masses(log_w_full[alive_idx], loglik, gamma,
                                      range(1, 1 << m))
            for mask in range(1, 1 << m):
                lw_alive = masses[mask]
                log_mass = logsumexp(lw_alive) if alive_idx.size else -np.inf
                log_hyp = (np.log(r) if r > 0.0 else -np.inf) + log_mass
                w_vec = np.zeros(parts.size)
                if np.isfinite(log_hyp):
                    w_vec[alive_idx] = np.exp(lw_alive - log_mass)
                locals_.append(LocalHypothesis(
                    float(log_hyp), 1.0, parts.reweighted(w_vec),
                    _cell_pairs(step, mask)))
        components.append(ExactComponent(comp.id, locals_))

    ppp = predicted.ppp if predicted.ppp is not None else TrajectoryParticles.empty()
    if m:
        with np.errstate(divide="ignore"):
            log_w_ppp = np.log(np.maximum(ppp.w, 0.0))
        loglik_ppp = (models.meas_loglik_matrix(ppp.kin, ppp.extent, zs, params)
                      if ppp.size else np.zeros((0, m)))
        log_clutter = models.clutter_logintensity(zs, params)
        for j in range(m):
            locals_ = [LocalHypothesis(0.0, 0.0,
                                       ppp.reweighted(np.zeros(ppp.size)),
                                       frozenset())]
            masks = [(1 << j) | low for low in range(1 << j)]
            masses = _cell_log_masses(log_w_ppp, loglik_ppp, gamma, masks)
            for mask in masks:
                lw = masses[mask]
                log_mass = logsumexp(lw) if ppp.size else -np.inf
                if mask == 1 << j:
                    log_total = np.logaddexp(log_clutter[j], log_mass)
                else:
                    log_total = log_mass
                exist = float(np.exp(log_mass - log_total)) if np.isfinite(log_total) else 0.0
                w_vec = np.zeros(ppp.size)
                if np.isfinite(log_mass):
                    w_vec = np.exp(lw - log_mass)
                locals_.append(LocalHypothesis(
                    float(log_total), exist, ppp.reweighted(w_vec),
                    _cell_pairs(step, mask)))
            components.append(ExactComponent(("new", step, j), locals_))

    ppp_post = ppp.reweighted(ppp.w * np.exp(-gamma))
    globals_ = enumerate_globals(components, m, len(predicted.components))
    return PmbmDensity(step, components, globals_, ppp_post)


def _partition_assignments(m: int, n_priors: int):
    """Yield every division of m measurements: each goes to one prior
    component's cell or into an unlabeled cluster of new detections."""
    prior_cells = [0] * n_priors
    new_cells: list[int] = []

    def rec(j):
        if j == m:
            yield tuple(prior_cells), tuple(new_cells)
            return
        bit = 1 << j
        for i in range(n_priors):
            prior_cells[i] |= bit
            yield from rec(j + 1)
            prior_cells[i] ^= bit
        for idx in range(len(new_cells)):
            new_cells[idx] |= bit
            yield from rec(j + 1)
            new_cells[idx] ^= bit
        new_cells.append(bit)
        yield from rec(j + 1)
        new_cells.pop()

    yield from rec(0)


def enumerate_globals(components, m: int, n_priors: int) -> list:
    """All global hypotheses over the given components, weight-normalized.

    A global picks one local per component such that the chosen measurement
    cells are disjoint and cover the frame. Hypotheses with zero weight
    (impossible cells) are dropped.
    """
    raw = []
    for prior_cells, new_cells in _partition_assignments(m, n_priors):
        choice = [0] * len(components)
        for i, mask in enumerate(prior_cells):
            choice[i] = mask
        for mask in new_cells:
            high = mask.bit_length() - 1
            choice[n_priors + high] = (mask ^ (1 << high)) + 1
        lw = sum(components[c].locals[idx].log_weight
                 for c, idx in enumerate(choice))
        if np.isfinite(lw):
            raw.append((tuple(choice), lw))
    if not raw:
        raise RuntimeError("no feasible global hypothesis")
    log_ws = np.array([lw for _, lw in raw])
    norm = logsumexp(log_ws)
    return [GlobalHypothesis(choice, float(lw), float(np.exp(lw - norm)))
            for (choice, lw) in raw]


def marginal_assoc_probs(pmbm: PmbmDensity) -> list:
    """Per component, the posterior probability of each local hypothesis."""
    out = [np.zeros(len(comp.locals)) for comp in pmbm.components]
    for g in pmbm.globals_:
        for c, idx in enumerate(g.choice):
            out[c][idx] += g.weight
    return out


def pmb_project(pmbm: PmbmDensity) -> PmbDensity:
    """Project the hypothesis mixture onto a single multi-Bernoulli.

    Per component the existence is the marginal expected existence and the
    state density the existence-weighted mixture of local densities, which
    is the moment-matched (KLD-minimizing) Bernoulli for the marginal.
    New components that are certainly absent are dropped.
    """
    probs = marginal_assoc_probs(pmbm)
    comps = []
    for comp, p in zip(pmbm.components, probs):
        r = float(sum(pi * loc.existence for pi, loc in zip(p, comp.locals)))
        support = comp.locals[0].particles
        if r <= 0.0:
            if comp.origin and comp.origin[0] == "new":
                continue
            comps.append(BernoulliComponent(comp.origin, 0.0, support.copy()))
            continue
        w = np.zeros(support.size)
        for pi, loc in zip(p, comp.locals):
            if pi * loc.existence > 0.0:
                w += pi * loc.existence * loc.particles.w
        w /= w.sum()
        if comp.origin and comp.origin[0] == "new":
            ident = (pmbm.step, comp.origin[2])
        else:
            ident = comp.origin
        comps.append(BernoulliComponent(ident, r, support.reweighted(w)))
    return PmbDensity(pmbm.step, comps, ppp=pmbm.ppp)

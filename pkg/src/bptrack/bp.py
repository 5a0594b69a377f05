"""Particle belief propagation for the measurement update.

The update runs message passing on the bipartite association graph between
potential objects (prior components plus one candidate new component per
measurement) and measurements. Messages from objects to measurements
(theta) carry how strongly an object claims a measurement relative to
clutter; the return messages (xi) aggregate the competition. After a fixed
number of iterations the component beliefs are read off and packaged as an
updated multi-Bernoulli density.

All per-particle bookkeeping is done in log domain with max-shift scaling;
likelihoods enter only through the clutter-normalized ratio
G = gamma * l(z|x) / lambda_clutter(z), so the update is invariant to a
common rescaling of measurement units.

The candidate component for measurement j may also claim measurements
processed before j, mirroring the unique-cell construction of the exact
update; its own measurement is mandatory (a new object exists only if it
explains the detection that spawned it).

Claim messages for prior components are recomputed synchronously from
the last round of measurement feedback. Candidate rows instead update
sequentially in processing order, each against the freshest rival claims:
a fully synchronous schedule flip-flops on measurement clusters (every
candidate claims the whole cluster, then every candidate backs off, with
the parity of the iteration count deciding which state the beliefs are
read from), so clustered births would either spawn duplicate components
or none at all. The sequential sweep settles within a few rounds and the
last candidate of a cluster absorbs it, matching the enumeration result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from . import linalg, models
from .linalg import RngStream
from .models import ModelParams
from .particles import BernoulliComponent, PmbDensity, TrajectoryParticles

_LOG_THETA_CAP = 680.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class BpOptions:
    """Knobs for the BP update.

    iterations: message passing rounds (3 is enough in practice)
    censor_threshold: drop object-measurement pairs whose initial claim
        message falls below this; 0 keeps everything
    reorder: process measurements in descending order of the strongest
        initial claim by a prior component, so unexplained clusters land at
        the end and a single candidate component can absorb each cluster
    meas_driven_birth: sample fresh particles around each measurement for
        the candidate components instead of copying the undetected-object
        PPP particles (mandatory in scalar PPP mode)
    proposal_particles: particle count for measurement-driven candidates
    proposal_kernel_cov: position kernel; None derives rho * mean birth
        extent + measurement noise from the model
    """

    iterations: int = 3
    censor_threshold: float = 1e-9
    reorder: bool = True
    meas_driven_birth: bool = False
    proposal_particles: int = 2000
    proposal_kernel_cov: np.ndarray | None = None


@dataclass
class EpsilonMessage:
    """Extrinsic object-to-measurement message: total mass (existence part
    plus the nonexistence alternative) and normalized particle weights."""

    total: float
    particle_weights: np.ndarray


@dataclass
class _CompState:
    kind: str                     # "prior" or "new"
    r: float                      # prior existence; unused for new comps
    log_base: np.ndarray          # (L,) log predicted weights (incl. e^-gamma)
    g_table: np.ndarray           # (L, m) clutter-normalized likelihood ratios
    adm: np.ndarray               # (m,) admissible measurement columns
    own: int | None               # processing column of the spawning measurement
    particles: TrajectoryParticles
    origin: tuple                 # component id (priors) or (step, orig_j)


@dataclass
class BpMessages:
    """Message-passing state between the staged update operations."""

    step: int
    zs: np.ndarray                # measurements in processing order
    perm: np.ndarray              # processing order -> original index
    comps: list
    n_priors: int
    theta: np.ndarray | None = None
    xi: np.ndarray | None = None
    ppp: TrajectoryParticles | None = None
    ppp_scalar: float | None = None

    def epsilon(self, i: int, j: int) -> EpsilonMessage:
        """Extrinsic message from component i to measurement column j under
        the current xi state; diagnostic accessor used by tests."""
        comp = self.comps[i]
        if not comp.adm[j]:
            raise ValueError(f"pair ({i}, {j}) is not admissible")
        xi_row = self._xi_row(i)
        t_base, t_ext = _pair_log_weights(comp, xi_row)
        own = comp.own is not None and j == comp.own
        t = t_base if own else t_ext
        if t.size == 0 or not np.isfinite(np.max(t)):
            return EpsilonMessage(_nonexistence_mass(comp), np.zeros(t.size))
        mshift = float(np.max(t))
        e = np.exp(t - mshift)
        if not own:
            e = e / _column_factor(comp, xi_row, j)
        s = float(e.sum())
        total = float(np.exp(mshift) * s * _existence_scale(comp)
                      + _nonexistence_mass(comp))
        return EpsilonMessage(total, e / s if s > 0 else e)

    def _xi_row(self, i: int) -> np.ndarray | None:
        return None if self.xi is None else self.xi[i]


def _existence_scale(comp: _CompState) -> float:
    return comp.r if comp.kind == "prior" else 1.0


def _nonexistence_mass(comp: _CompState) -> float:
    return 1.0 - comp.r if comp.kind == "prior" else 1.0


def _column_factor(comp: _CompState, xi_row, j: int):
    """Per-particle factor contributed by column j, divided back out when
    forming the message toward j."""
    if xi_row is None:
        return np.ones(comp.log_base.size)
    return 1.0 + comp.g_table[:, j] / xi_row[j]


def _pair_log_weights(comp: _CompState, xi_row):
    """Log particle weights before and after the mandatory factor.

    t_base carries the predicted weights times one (1 + G/xi) factor per
    admissible non-spawning column; before any xi exists those factors are
    absent. t_ext additionally applies the spawning column's mandatory
    G/xi factor for a new component (xi starting at 1), and equals t_base
    for a prior. Beliefs and non-spawning messages derive from t_ext,
    spawning-column messages from t_base.
    """
    t = comp.log_base.copy()
    if xi_row is not None:
        for j in np.where(comp.adm)[0]:
            if j == comp.own:
                continue
            t += np.log1p(comp.g_table[:, j] / xi_row[j])
    if comp.own is None:
        return t, t
    xi_val = 1.0 if xi_row is None else xi_row[comp.own]
    with np.errstate(divide="ignore"):
        t_ext = t + np.log(comp.g_table[:, comp.own]) - np.log(xi_val)
    return t, t_ext


def _theta_row(comp: _CompState, xi_row, m: int) -> np.ndarray:
    """Claim messages from one component to every admissible measurement.

    Each message is the odds that the component exists and explains the
    measurement (possibly among others) against it not doing so, with
    leave-one-out totals so the target measurement's own feedback never
    enters. The spawning column of a new component is instead normalized
    by the unit nonexistence mass.
    """
    row = np.zeros(m)
    if not m or not comp.adm.any() or comp.log_base.size == 0:
        return row
    t_base, t_ext = _pair_log_weights(comp, xi_row)
    if comp.kind == "prior":
        log_r = np.log(comp.r) if comp.r > 0.0 else -np.inf
        log_miss = np.log1p(-comp.r) if comp.r < 1.0 else -np.inf
    else:
        log_r, log_miss = 0.0, 0.0
    m_ext = float(np.max(t_ext))
    e_ext = np.exp(t_ext - m_ext) if np.isfinite(m_ext) else None
    for j in np.where(comp.adm)[0]:
        if comp.own is not None and j == comp.own:
            m_base = float(np.max(t_base))
            if not np.isfinite(m_base):
                continue
            num = float(np.exp(t_base - m_base) @ comp.g_table[:, j])
            if num > 0.0:
                row[j] = np.exp(min(np.log(num) + m_base, _LOG_THETA_CAP))
            continue
        if e_ext is None:
            continue
        f = _column_factor(comp, xi_row, j)
        num = float(e_ext @ (comp.g_table[:, j] / f))
        if num <= 0.0:
            continue
        s_loo = float(e_ext @ (1.0 / f))
        log_denom = np.logaddexp(log_r + np.log(s_loo) + m_ext, log_miss)
        log_theta = log_r + np.log(num) + m_ext - log_denom
        row[j] = np.exp(min(log_theta, _LOG_THETA_CAP))
    return row


def _default_kernel_cov(params: ModelParams) -> np.ndarray:
    return params.rho * params.birth_extent_mean + params.sigma_r**2 * np.eye(2)


def _gate_columns(pos: np.ndarray, extents: np.ndarray, zs: np.ndarray,
                  params: ModelParams, log_clutter: np.ndarray,
                  threshold: float) -> np.ndarray:
    """Columns that cannot be certified below the censor threshold.

    Uses an upper bound on the likelihood ratio G from the particle cloud
    radius and the flattest plausible measurement covariance, so dropping a
    column never removes a pair the exact censor rule would have kept.
    """
    m = zs.shape[0]
    if pos.shape[0] == 0:
        return np.zeros(m, dtype=bool)
    if threshold <= 0.0:
        return np.ones(m, dtype=bool)
    center = pos.mean(axis=0)
    rad = np.sqrt(np.max(np.sum((pos - center) ** 2, axis=1)))
    s11 = params.rho * extents[:, 0, 0] + params.sigma_r**2
    s12 = params.rho * extents[:, 0, 1]
    s22 = params.rho * extents[:, 1, 1] + params.sigma_r**2
    s_tr = float(np.max(s11 + s22))
    det_min = float(np.min(s11 * s22 - s12 * s12))
    d = np.sqrt(np.sum((zs - center) ** 2, axis=1))
    d_eff = np.maximum(d - rad, 0.0)
    log_bound = (np.log(params.gamma) - log_clutter - 0.5 * np.log(det_min)
                 - _LOG_2PI - d_eff**2 / (2.0 * s_tr))
    return log_bound >= np.log(threshold)


def _likelihood_table(kins, extents, alive, zs, cols, params, log_clutter):
    """(L, m) table of G = gamma * l / lambda_clutter, zero outside the
    alive rows and the given columns."""
    table = np.zeros((kins.shape[0], zs.shape[0]))
    idx = np.where(alive)[0]
    cset = np.where(cols)[0]
    if idx.size and cset.size:
        ll = models.meas_loglik_matrix(kins[idx], extents[idx], zs[cset], params)
        table[np.ix_(idx, cset)] = np.exp(
            np.log(params.gamma) + ll - log_clutter[cset][None, :])
    return table


def _kernel_intensity(pos: np.ndarray, ppp: TrajectoryParticles,
                      kernel: np.ndarray) -> np.ndarray:
    """Kernel-smoothed position intensity of the PPP at the proposed points,
    with an 8 sigma cutoff on the pairwise distances. Chunked to keep the
    pairwise matrices small."""
    src = ppp.kin[:, [0, 2]]
    inv = np.linalg.inv(kernel)
    logdet = float(np.log(np.linalg.det(kernel)))
    cutoff_sq = 64.0 * float(np.max(np.linalg.eigvalsh(kernel)))
    out = np.empty(pos.shape[0])
    block = max(1, 2**20 // max(src.shape[0], 1))
    for lo in range(0, pos.shape[0], block):
        diff = pos[lo:lo + block, None, :] - src[None, :, :]
        dist_sq = np.sum(diff * diff, axis=-1)
        quad = (diff[..., 0] ** 2 * inv[0, 0]
                + 2.0 * diff[..., 0] * diff[..., 1] * inv[0, 1]
                + diff[..., 1] ** 2 * inv[1, 1])
        dens = np.where(dist_sq <= cutoff_sq,
                        np.exp(-0.5 * quad - 0.5 * logdet - _LOG_2PI), 0.0)
        out[lo:lo + block] = dens @ ppp.w
    with np.errstate(divide="ignore"):
        return np.log(out)


def _sample_candidate(z, params: ModelParams, options: BpOptions,
                      rng: RngStream, step: int,
                      ppp: TrajectoryParticles | None,
                      ppp_scalar: float | None):
    """Measurement-driven candidate component: particles proposed around the
    measurement, importance-weighted against the undetected-object
    intensity smoothed with the proposal kernel (or flat in scalar mode).
    Velocity and extent are proposed from the birth priors, so those
    factors cancel in the weights."""
    kernel = (np.asarray(options.proposal_kernel_cov, dtype=float)
              if options.proposal_kernel_cov is not None
              else _default_kernel_cov(params))
    n = options.proposal_particles
    pos = linalg.sample_gaussian(z, kernel, rng, size=n)
    kins = np.empty((n, 4))
    kins[:, 0] = pos[:, 0]
    kins[:, 2] = pos[:, 1]
    vel = rng.gen.standard_normal((n, 2)) * np.sqrt(params.birth_velocity_cov)
    kins[:, 1] = vel[:, 0]
    kins[:, 3] = vel[:, 1]
    extents = linalg.sample_inverse_wishart(params.birth_extent_mean,
                                            params.birth_extent_dof, rng,
                                            size=n)
    log_prop = linalg.gaussian_logpdf(pos, z, kernel)
    if ppp_scalar is not None:
        log_intensity = np.full(n, -np.inf)
        if ppp_scalar > 0.0:
            inside = models.in_region(pos, params)
            log_intensity[inside] = np.log(ppp_scalar) - np.log(params.area)
    elif ppp is None or ppp.size == 0:
        log_intensity = np.full(n, -np.inf)
    else:
        log_intensity = _kernel_intensity(pos, ppp, kernel)
    log_v0 = log_intensity - params.gamma - np.log(n) - log_prop
    parts = TrajectoryParticles.fresh(step, kins, extents, np.zeros(n))
    return parts, log_v0


def bp_init(predicted: PmbDensity, zs: np.ndarray, params: ModelParams,
            options: BpOptions, rng: RngStream | None = None) -> BpMessages:
    """Build the association graph state and the first claim messages.

    Validates the frame, evaluates gated likelihood tables, fixes the
    measurement processing order, spawns candidate components, and censors
    pairs whose initial message is below the threshold.
    """
    zs = np.asarray(zs, dtype=float).reshape(-1, 2)
    m = zs.shape[0]
    step = predicted.step
    if m and not np.all(models.in_region(zs, params)):
        raise ValueError("measurements outside the surveillance region")
    if predicted.scalar_mode and m and not options.meas_driven_birth:
        raise ValueError("scalar PPP mode requires measurement-driven birth")
    if options.meas_driven_birth and m and rng is None:
        raise ValueError("measurement-driven birth needs a random stream")
    log_clutter = models.clutter_logintensity(zs, params) if m else np.zeros(0)

    comps = []
    theta_rows = []
    for comp in predicted.components:
        parts = comp.particles
        alive = parts.alive_mask(step)
        with np.errstate(divide="ignore"):
            log_base = (np.log(parts.w / parts.w.sum())
                        - np.where(alive, params.gamma, 0.0))
        adm = (_gate_columns(parts.kin[alive][:, [0, 2]], parts.extent[alive],
                             zs, params, log_clutter, options.censor_threshold)
               if m else np.zeros(0, dtype=bool))
        g_table = _likelihood_table(parts.kin, parts.extent, alive, zs, adm,
                                    params, log_clutter)
        state = _CompState("prior", float(comp.r), log_base, g_table, adm,
                           None, parts, comp.id)
        comps.append(state)
        theta_rows.append(_theta_row(state, None, m))

    # measurement processing order: strongest prior claim first
    if m and options.reorder and theta_rows:
        strength = np.max(np.vstack(theta_rows), axis=0)
        perm = np.argsort(-strength, kind="stable")
    else:
        perm = np.arange(m)
    zs_proc = zs[perm]
    log_clutter_proc = log_clutter[perm] if m else log_clutter
    for state, row in zip(comps, theta_rows):
        state.adm = state.adm[perm]
        state.g_table = state.g_table[:, perm]
    theta_rows = [row[perm] for row in theta_rows]

    ppp = predicted.ppp
    for j0 in range(m):
        if options.meas_driven_birth:
            sub_rng = rng.derive("birth", step, int(perm[j0]))
            parts, log_v0 = _sample_candidate(zs_proc[j0], params, options,
                                              sub_rng, step, ppp,
                                              predicted.ppp_scalar)
        elif ppp is None or ppp.size == 0:
            parts, log_v0 = TrajectoryParticles.empty(), np.zeros(0)
        else:
            parts = ppp.copy()
            with np.errstate(divide="ignore"):
                log_v0 = np.log(np.maximum(parts.w, 0.0)) - params.gamma
        adm = np.zeros(m, dtype=bool)
        adm[:j0 + 1] = _gate_columns(parts.kin[:, [0, 2]], parts.extent,
                                     zs_proc[:j0 + 1], params,
                                     log_clutter_proc[:j0 + 1],
                                     options.censor_threshold)
        adm[j0] = parts.size > 0
        g_table = _likelihood_table(parts.kin, parts.extent,
                                    np.ones(parts.size, dtype=bool), zs_proc,
                                    adm, params, log_clutter_proc)
        state = _CompState("new", 1.0, log_v0, g_table, adm, j0, parts,
                           (step, int(perm[j0])))
        comps.append(state)

    # first claim messages: priors without competition (also the reorder
    # key above), candidates sequentially against the rows already placed
    theta = np.zeros((len(comps), m))
    for i, row in enumerate(theta_rows):
        theta[i] = row
    for i in range(len(theta_rows), len(comps)):
        theta[i] = _theta_row(comps[i], _live_xi_row(theta, i), m)
    # censor weak pairs; the spawning pair of a candidate is mandatory
    if m:
        for i, comp in enumerate(comps):
            weak = theta[i] < options.censor_threshold
            if comp.own is not None:
                weak[comp.own] = False
            comp.adm &= ~weak
            comp.g_table[:, ~comp.adm] = 0.0
            theta[i, ~comp.adm] = 0.0

    return BpMessages(step, zs_proc, perm, comps, len(predicted.components),
                      theta=theta, ppp=ppp, ppp_scalar=predicted.ppp_scalar)


def _live_xi_row(theta: np.ndarray, i: int) -> np.ndarray:
    """Leave-one-out measurement feedback for row i drawn from the table
    as it currently stands, with the same cancellation guard as bp_xi."""
    col = theta.sum(axis=0)
    xi = 1.0 + (col - theta[i])
    dom = (theta[i] > 0.5 * col) & (theta[i] > 0.0)
    if dom.any():
        others = np.delete(theta, i, axis=0)
        xi[dom] = 1.0 + (others[:, dom].sum(axis=0) if others.size
                         else np.zeros(int(dom.sum())))
    return xi


def bp_measurement_evaluation(msgs: BpMessages) -> np.ndarray:
    """Recompute the claim messages for one round.

    Prior rows are evaluated against the feedback from the previous round;
    candidate rows are evaluated in processing order against the live
    table, so each sees the rows updated before it within this round.
    """
    m = msgs.zs.shape[0]
    theta = (msgs.theta.copy() if msgs.theta is not None
             else np.zeros((len(msgs.comps), m)))
    for i, comp in enumerate(msgs.comps):
        if comp.kind == "prior":
            theta[i] = _theta_row(comp, msgs._xi_row(i), m)
        else:
            theta[i] = _theta_row(comp, _live_xi_row(theta, i), m)
    msgs.theta = theta
    return theta


def bp_xi(msgs: BpMessages) -> np.ndarray:
    """Measurement-to-object messages: one plus the claims of all rivals.

    The subtraction form is replaced by an explicit sum whenever a single
    component dominates a column, where cancellation would otherwise lose
    the small rival total.
    """
    theta = msgs.theta
    col_sum = theta.sum(axis=0)
    xi = 1.0 + (col_sum[None, :] - theta)
    for j in range(theta.shape[1]) if theta.size else ():
        i = int(np.argmax(theta[:, j]))
        if theta[i, j] > 0.5 * col_sum[j] and theta[i, j] > 0.0:
            xi[i, j] = 1.0 + np.delete(theta[:, j], i).sum()
    msgs.xi = xi
    return xi


def bp_extrinsic(msgs: BpMessages, xi: np.ndarray) -> BpMessages:
    """Install the measurement feedback, defining the next extrinsic
    messages (available through msgs.epsilon)."""
    msgs.xi = xi
    return msgs


def _beliefs(msgs: BpMessages):
    out = []
    for i, comp in enumerate(msgs.comps):
        _, t = _pair_log_weights(comp, msgs._xi_row(i))
        if t.size == 0:
            out.append((0.0, np.zeros(0)))
            continue
        log_s = logsumexp(t)
        if comp.kind == "prior":
            if not np.isfinite(log_s) or comp.r <= 0.0:
                out.append((comp.r, np.exp(comp.log_base
                                           - logsumexp(comp.log_base))))
                continue
            log_num = np.log(comp.r) + log_s
            log_denom = np.logaddexp(
                log_num, np.log1p(-comp.r) if comp.r < 1.0 else -np.inf)
            r_post = float(np.exp(log_num - log_denom))
        else:
            if not np.isfinite(log_s):
                out.append((0.0, np.full(t.size, 1.0 / t.size)))
                continue
            r_post = float(expit(log_s))
        out.append((r_post, np.exp(t - log_s)))
    return out


def bp_update(predicted: PmbDensity, zs, params: ModelParams,
              options: BpOptions | None = None,
              rng: RngStream | None = None) -> PmbDensity:
    """Full BP measurement update of a predicted PMB density.

    Returns the posterior PMB with updated prior components (same particle
    supports, new weights and existences), one new component per
    measurement, and the thinned undetected-object intensity. Components
    are not pruned here.
    """
    options = options or BpOptions()
    msgs = bp_init(predicted, zs, params, options, rng)
    if msgs.zs.shape[0]:
        bp_xi(msgs)
        for _ in range(options.iterations - 1):
            bp_measurement_evaluation(msgs)
            bp_xi(msgs)
    beliefs = _beliefs(msgs)

    comps = []
    for comp, (r_post, weights) in zip(msgs.comps[:msgs.n_priors],
                                       beliefs[:msgs.n_priors]):
        comps.append(BernoulliComponent(comp.origin, r_post,
                                        comp.particles.reweighted(weights)))
    new_comps = [BernoulliComponent(comp.origin, r_post,
                                    comp.particles.reweighted(weights))
                 for comp, (r_post, weights) in zip(msgs.comps[msgs.n_priors:],
                                                    beliefs[msgs.n_priors:])
                 if comp.particles.size > 0]
    new_comps.sort(key=lambda c: c.id)
    comps.extend(new_comps)

    ppp_post = None
    scalar_post = None
    if predicted.scalar_mode:
        scalar_post = float(predicted.ppp_scalar * np.exp(-params.gamma))
    elif predicted.ppp is not None:
        ppp_post = predicted.ppp.reweighted(predicted.ppp.w
                                            * np.exp(-params.gamma))
    return PmbDensity(msgs.step, comps, ppp=ppp_post, ppp_scalar=scalar_post,
                      ppp_hist=predicted.ppp_hist)

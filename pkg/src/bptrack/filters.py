"""Multi-object trajectory filters built on the belief propagation update.

Three recursions share the measurement update and differ only in what they
remember about the past:

``tpmb-all``
    Trajectory density over both alive and dead trajectories. Each Bernoulli
    component carries alive particles plus one aggregate particle per past
    end time. The aggregate is exact: once a trajectory hypothesis dies its
    particles stop receiving measurement factors, so the whole branch scales
    as a unit and within-branch state detail lives in the stored marginal
    snapshot taken at the death step.

``tpmb-alive``
    Trajectory density over trajectories that are still alive. Components
    keep full per-particle start times but drop dead branches during
    prediction; existence decays by the survival probability.

``pmb``
    Plain multi-Bernoulli over current states. Identical to ``tpmb-alive``
    for the current step (start times are collapsed after prediction), with
    trajectory estimates rebuilt from a per-step commit log.

All three produce identical current-step beliefs when run with the same
random stream because every random draw is keyed by content (step, component
id, purpose) rather than by call order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, models
from .bp import BpOptions, bp_update
from .linalg import RngStream
from .models import ModelParams
from .particles import (BernoulliComponent, PmbDensity, PppHistory,
                        TrajectoryParticles)

VARIANTS = ("tpmb-all", "tpmb-alive", "pmb")


@dataclass
class FilterOptions:
    """Knobs for the filter recursion around the measurement update.

    ``prune_existence`` applies to the probability that the object exists
    *and is still alive*; in the all-trajectory variant a component whose
    alive probability falls below it keeps its dead branches (the trajectory
    ended) and is kept as a frozen component while its existence stays at or
    above ``estimate_threshold``.

    ``track_ppp_history`` keeps per-particle state histories for the
    undetected-object mixture so that components born from it inherit
    marginals for the steps before their first detection. ``None`` enables
    it exactly when it is useful: particle-mode mixture and new components
    copied from it (not measurement-driven birth).
    """

    variant: str = "tpmb-all"
    prune_existence: float = 1e-3
    end_time_prune: float = 1e-4
    particle_cap: int = 2000
    ppp_particle_cap: int = 10000
    resample_ess_frac: float = 0.5
    birth_particles: int = 2000
    scalar_ppp: bool = False
    track_ppp_history: bool | None = None
    skip_update_below: float = 0.0
    estimate_threshold: float = 0.5
    bp: BpOptions = field(default_factory=BpOptions)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.scalar_ppp and not self.bp.meas_driven_birth:
            raise ValueError("scalar_ppp requires meas_driven_birth")

    def wants_ppp_history(self) -> bool:
        if self.track_ppp_history is not None:
            return self.track_ppp_history
        return not self.scalar_ppp and not self.bp.meas_driven_birth


# ---------------------------------------------------------------------------
# stored marginals


@dataclass
class Snapshot:
    """Alive-particle marginal of one component at one step.

    ``weights`` are normalized over the alive particles. ``kin``/``extent``
    are None when only means were recorded (the pmb variant never runs the
    backward pass, so it skips the full arrays).
    """

    weights: np.ndarray | None
    starts: np.ndarray | None
    kin: np.ndarray | None
    extent: np.ndarray | None
    kin_mean: np.ndarray
    ext_mean: np.ndarray


def _make_snapshot(weights, starts, kin, extent, full: bool) -> Snapshot:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("snapshot needs positive total weight")
    wn = w / total
    kin_mean = wn @ kin
    ext_mean = np.einsum("l,lij->ij", wn, extent)
    ext_mean = 0.5 * (ext_mean + ext_mean.T)
    if full:
        return Snapshot(wn, np.asarray(starts, dtype=int).copy(),
                        np.array(kin, dtype=float), np.array(extent, dtype=float),
                        kin_mean, ext_mean)
    return Snapshot(None, None, None, None, kin_mean, ext_mean)


class StoredMarginals:
    """Per-component, per-step alive marginals recorded during filtering.

    ``window`` bounds retention for long runs: snapshots older than the
    given number of steps behind the newest stored step are discarded,
    trading full-interval smoothing for constant memory. Default keeps
    everything.
    """

    def __init__(self, window: int | None = None) -> None:
        if window is not None and window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self._data: dict[object, dict[int, Snapshot]] = {}

    def store(self, comp_id, step: int, weights, starts, kin, extent,
              full: bool = True) -> None:
        snap = _make_snapshot(weights, starts, kin, extent, full)
        per_comp = self._data.setdefault(comp_id, {})
        per_comp[step] = snap
        if self.window is not None:
            cutoff = max(per_comp) - self.window
            for old in [k for k in per_comp if k <= cutoff]:
                del per_comp[old]

    def get(self, comp_id, step: int) -> Snapshot:
        return self._data[comp_id][step]

    def has(self, comp_id, step: int | None = None) -> bool:
        if comp_id not in self._data:
            return False
        return step is None or step in self._data[comp_id]

    def first_step(self, comp_id) -> int:
        return min(self._data[comp_id])

    def last_step(self, comp_id) -> int:
        return max(self._data[comp_id])

    def drop(self, comp_id) -> None:
        self._data.pop(comp_id, None)

    def ids(self):
        return self._data.keys()


# ---------------------------------------------------------------------------
# prediction


def predict_alive(comp: BernoulliComponent, new_step: int, params: ModelParams,
                  rng: RngStream) -> BernoulliComponent:
    """Advance a component whose particles are all alive.

    Existence decays by the survival probability; weights are untouched.
    """
    parts = comp.particles
    kins, exts = models.transition_sample_batch(parts.kin, parts.extent,
                                                params, rng)
    new_parts = TrajectoryParticles(parts.start.copy(),
                                    np.full(parts.size, new_step, dtype=int),
                                    kins, exts, parts.w.copy())
    return BernoulliComponent(comp.id, comp.r * params.p_survival, new_parts)


def predict_all(comp: BernoulliComponent, new_step: int, params: ModelParams,
                rng: RngStream) -> BernoulliComponent:
    """Advance a component that also tracks ended trajectories.

    The alive block moves through the transition with its mass scaled by the
    survival probability; the complementary mass joins the dead side as a
    single aggregate particle whose end time is the old step. Existence
    (trajectory ever existed) is unchanged. Components with no alive mass
    are frozen and returned as is.
    """
    parts = comp.particles
    alive = parts.alive_mask(new_step - 1)
    n_alive = int(alive.sum())
    if n_alive == 0:
        return comp
    kin_a = parts.kin[alive]
    ext_a = parts.extent[alive]
    w_a = parts.w[alive]
    mass_a = w_a.sum()
    kins, exts = models.transition_sample_batch(kin_a, ext_a, params, rng)

    # Aggregate dead particle: state set to the alive mean, never used for
    # estimation (per-step states come from the stored snapshot at this step).
    wn = w_a / mass_a
    dead_kin = (wn @ kin_a)[None, :]
    dead_ext = np.einsum("l,lij->ij", wn, ext_a)
    dead_ext = 0.5 * (dead_ext + dead_ext.T)[None, :, :]
    dead_start = np.array([int(np.round(wn @ parts.start[alive]))])
    dead_w = np.array([(1.0 - params.p_survival) * mass_a])

    keep_dead = ~alive
    new_start = np.concatenate([parts.start[alive], parts.start[keep_dead],
                                dead_start])
    new_end = np.concatenate([np.full(n_alive, new_step, dtype=int),
                              parts.end[keep_dead],
                              np.array([new_step - 1])])
    new_kin = np.concatenate([kins, parts.kin[keep_dead], dead_kin])
    new_ext = np.concatenate([exts, parts.extent[keep_dead], dead_ext])
    new_w = np.concatenate([w_a * params.p_survival, parts.w[keep_dead],
                            dead_w])
    new_parts = TrajectoryParticles(new_start, new_end, new_kin, new_ext, new_w)
    return BernoulliComponent(comp.id, comp.r, new_parts)


def predict_ppp(density: PmbDensity, new_step: int, params: ModelParams,
                options: FilterOptions, rng: RngStream):
    """Predict the undetected-object mixture one step forward.

    Returns ``(ppp, ppp_scalar, ppp_hist)``. Particle weights scale
    deterministically by the survival probability and the birth block
    carries exactly the birth rate, so the total mixture mass follows the
    closed-form intensity recursion with no Monte Carlo error.
    """
    if options.scalar_ppp:
        lam = params.birth_rate + params.p_survival * density.ppp_scalar
        return None, lam, None

    ppp = density.ppp
    hist = density.ppp_hist
    if ppp is None:
        ppp = TrajectoryParticles.empty()
    if ppp.size:
        adv_kin, adv_ext = models.transition_sample_batch(ppp.kin, ppp.extent,
                                                          params, rng)
        surv_w = ppp.w * params.p_survival
        surv_start = ppp.start
    else:
        adv_kin = np.empty((0, models.KIN_DIM))
        adv_ext = np.empty((0, 2, 2))
        surv_w = np.empty(0)
        surv_start = np.empty(0, dtype=int)

    n_birth = options.birth_particles
    birth_kin, birth_ext = models.birth_sample(params, rng, n_birth)
    birth_w = np.full(n_birth, params.birth_rate / n_birth)

    new_ppp = TrajectoryParticles(
        np.concatenate([surv_start, np.full(n_birth, new_step, dtype=int)]),
        np.full(surv_w.size + n_birth, new_step, dtype=int),
        np.concatenate([adv_kin, birth_kin]),
        np.concatenate([adv_ext, birth_ext]),
        np.concatenate([surv_w, birth_w]))
    if hist is not None:
        hist = hist.subset(range(len(hist)))
        hist.advance(np.arange(ppp.size), adv_kin, adv_ext,
                     birth_kin, birth_ext)

    if new_ppp.size > options.ppp_particle_cap:
        n_keep = options.ppp_particle_cap
        total = new_ppp.w.sum()
        idx = linalg.systematic_resample(new_ppp.w / total, n_keep, rng)
        new_ppp = new_ppp.subset(idx)
        new_ppp.w[:] = total / n_keep
        if hist is not None:
            hist = hist.subset(idx)
    return new_ppp, None, hist


def marginalize_past(density: PmbDensity) -> PmbDensity:
    """Collapse trajectory information to the current step (pmb variant)."""
    step = density.step
    comps = []
    for comp in density.components:
        parts = comp.particles
        flat = TrajectoryParticles(np.full(parts.size, step, dtype=int),
                                   parts.end.copy(), parts.kin.copy(),
                                   parts.extent.copy(), parts.w.copy())
        comps.append(BernoulliComponent(comp.id, comp.r, flat))
    ppp = density.ppp
    if ppp is not None:
        ppp = TrajectoryParticles(np.full(ppp.size, step, dtype=int),
                                  ppp.end.copy(), ppp.kin.copy(),
                                  ppp.extent.copy(), ppp.w.copy())
    return PmbDensity(step, comps, ppp=ppp, ppp_scalar=density.ppp_scalar,
                      ppp_hist=None)


def predict_density(density: PmbDensity, params: ModelParams,
                    options: FilterOptions, rng: RngStream) -> PmbDensity:
    """One prediction step for the full density, variant dispatched.

    Every component and the undetected mixture draw from streams derived by
    (purpose, step, id), so the realized noise is identical across variants
    holding the root stream fixed.
    """
    new_step = density.step + 1
    comps = []
    for comp in density.components:
        sub = rng.derive("predict", new_step, comp.id)
        if options.variant == "tpmb-all":
            comps.append(predict_all(comp, new_step, params, sub))
        else:
            comps.append(predict_alive(comp, new_step, params, sub))
    ppp, ppp_scalar, hist = predict_ppp(density, new_step, params, options,
                                        rng.derive("predict", new_step, "ppp"))
    predicted = PmbDensity(new_step, comps, ppp=ppp, ppp_scalar=ppp_scalar,
                           ppp_hist=hist)
    if options.variant == "pmb":
        predicted = marginalize_past(predicted)
    return predicted


# ---------------------------------------------------------------------------
# pruning and resampling


def prune_density(density: PmbDensity, options: FilterOptions):
    """Apply the existence and end-time prune rules.

    Returns ``(density, dropped_ids)``. The rules preserve the product
    r * (alive mass fraction) exactly except where they remove it entirely,
    and removal fires under the same condition in every variant, which keeps
    current-step beliefs identical across variants.
    """
    step = density.step
    kept = []
    dropped = []
    for comp in density.components:
        parts = comp.particles
        w = parts.w
        total = w.sum()
        if total <= 0.0 or comp.r <= 0.0:
            dropped.append(comp.id)
            continue
        alive = parts.alive_mask(step)
        alpha = w[alive].sum() / total
        r = comp.r

        drop_alive = alpha > 0.0 and r * alpha < options.prune_existence
        drop_dead = np.zeros(parts.size, dtype=bool)
        if alpha < 1.0 and options.end_time_prune > 0.0:
            ends = parts.end[~alive]
            masses = w[~alive] / total
            uniq, inv = np.unique(ends, return_inverse=True)
            branch_mass = np.bincount(inv, weights=masses)
            weak = branch_mass < options.end_time_prune
            if weak.any():
                drop_dead[~alive] = np.isin(ends, uniq[weak])

        keep = ~drop_dead
        if drop_alive:
            keep &= ~alive
        eps = w[~keep].sum() / total
        if eps >= 1.0 - 1e-15:
            dropped.append(comp.id)
            continue
        if eps > 0.0:
            parts = parts.subset(np.where(keep)[0])
            parts = parts.reweighted(parts.w / (1.0 - eps))
            r = r * (1.0 - eps)
            comp = BernoulliComponent(comp.id, r, parts)
            alive = parts.alive_mask(step)
            alpha = parts.w[alive].sum() / parts.w.sum()

        if alpha == 0.0 and comp.r < options.estimate_threshold:
            dropped.append(comp.id)
            continue
        kept.append(comp)
    out = PmbDensity(step, kept, ppp=density.ppp,
                     ppp_scalar=density.ppp_scalar, ppp_hist=density.ppp_hist)
    return out, dropped


def resample_density(density: PmbDensity, options: FilterOptions,
                     rng: RngStream) -> PmbDensity:
    """Systematically resample alive blocks that degenerated or overgrew.

    Dead aggregates are carried through untouched. The draw for each
    component comes from a stream keyed by (step, component id), so two
    variants holding the same component resample identically.
    """
    step = density.step
    comps = []
    for comp in density.components:
        parts = comp.particles
        alive = parts.alive_mask(step)
        n_alive = int(alive.sum())
        if n_alive == 0:
            comps.append(comp)
            continue
        w_a = parts.w[alive]
        mass = w_a.sum()
        ess = linalg.effective_sample_size(w_a)
        if n_alive <= options.particle_cap and \
                ess >= options.resample_ess_frac * n_alive:
            comps.append(comp)
            continue
        n_new = min(n_alive, options.particle_cap)
        sub = rng.derive("resample", step, comp.id)
        picks = linalg.systematic_resample(w_a / mass, n_new, sub)
        alive_idx = np.where(alive)[0]
        alive_parts = parts.subset(alive_idx[picks])
        alive_parts.w[:] = mass / n_new
        dead_parts = parts.subset(np.where(~alive)[0])
        new_parts = TrajectoryParticles.concat([alive_parts, dead_parts])
        comps.append(BernoulliComponent(comp.id, comp.r, new_parts))
    return PmbDensity(step, comps, ppp=density.ppp,
                      ppp_scalar=density.ppp_scalar, ppp_hist=density.ppp_hist)


# ---------------------------------------------------------------------------
# time marginals and estimation


def end_time_pmf(comp: BernoulliComponent):
    """Distribution of the trajectory end time, conditioned on existence.

    Alive particles show up as the atom at the current step.
    """
    parts = comp.particles
    total = parts.w.sum()
    uniq, inv = np.unique(parts.end, return_inverse=True)
    probs = np.bincount(inv, weights=parts.w) / total
    return uniq, probs


def start_time_pmf(snapshot: Snapshot):
    """Distribution of the start time within one stored alive marginal."""
    if snapshot.starts is None:
        raise ValueError("snapshot was stored without per-particle detail")
    uniq, inv = np.unique(snapshot.starts, return_inverse=True)
    probs = np.bincount(inv, weights=snapshot.weights)
    return uniq, probs


@dataclass
class TrajectoryEstimate:
    """A reported trajectory: states for every step in [start, end]."""

    id: object
    start: int
    end: int
    kin: np.ndarray
    extent: np.ndarray
    smoothed: bool = False
    degenerate: bool = False

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def state_at(self, step: int):
        if not self.start <= step <= self.end:
            raise IndexError(f"step {step} outside [{self.start}, {self.end}]")
        return self.kin[step - self.start], self.extent[step - self.start]


def _estimate_interval(comp: BernoulliComponent, marginals: StoredMarginals):
    """MAP end time, then MAP start time from the snapshot at that end.

    Ties break toward the earlier step. When per-step marginals for the
    early life of the component were never recorded (history tracking off),
    the reported start is clamped to the first recorded step.
    """
    ends, pe = end_time_pmf(comp)
    e_hat = int(ends[int(np.argmax(pe))])
    snap = marginals.get(comp.id, e_hat)
    if snap.starts is not None:
        starts, ps = start_time_pmf(snap)
        s_hat = int(starts[int(np.argmax(ps))])
    else:
        s_hat = marginals.first_step(comp.id)
    s_hat = max(s_hat, marginals.first_step(comp.id))
    return s_hat, e_hat


def estimate_trajectories(density: PmbDensity, marginals: StoredMarginals,
                          options: FilterOptions) -> list[TrajectoryEstimate]:
    """Report one trajectory per component with existence above threshold.

    States are the stored per-step alive means over the MAP interval.
    """
    out = []
    for comp in density.components:
        if comp.r < options.estimate_threshold:
            continue
        if not marginals.has(comp.id):
            continue
        s_hat, e_hat = _estimate_interval(comp, marginals)
        kin = np.stack([marginals.get(comp.id, k).kin_mean
                        for k in range(s_hat, e_hat + 1)])
        ext = np.stack([marginals.get(comp.id, k).ext_mean
                        for k in range(s_hat, e_hat + 1)])
        out.append(TrajectoryEstimate(comp.id, s_hat, e_hat, kin, ext))
    return out


class PmbTrackLog:
    """Commit log for the pmb variant's trajectory reconstruction.

    A component is committed at every step where its existence clears the
    report threshold. The trajectory reported at step k spans from the first
    commit to the last commit at or before k, with gaps filled from the
    recorded per-step means.
    """

    def __init__(self, threshold: float) -> None:
        self.threshold = threshold
        self._commits: dict[object, list[int]] = {}

    def record(self, density: PmbDensity) -> None:
        for comp in density.components:
            if comp.r >= self.threshold:
                self._commits.setdefault(comp.id, []).append(density.step)

    def estimates_at(self, step: int,
                     marginals: StoredMarginals) -> list[TrajectoryEstimate]:
        out = []
        for ident, steps in self._commits.items():
            first = steps[0]
            if first > step:
                continue
            last = max(s for s in steps if s <= step)
            kin = np.stack([marginals.get(ident, k).kin_mean
                            for k in range(first, last + 1)])
            ext = np.stack([marginals.get(ident, k).ext_mean
                            for k in range(first, last + 1)])
            out.append(TrajectoryEstimate(ident, first, last, kin, ext))
        return out


# ---------------------------------------------------------------------------
# backward simulation


def backward_simulate(comp_id, start: int, end: int,
                      marginals: StoredMarginals, params: ModelParams,
                      n_draws: int, rng: RngStream):
    """Smooth one trajectory by sampling backward through stored marginals.

    Draws particle indices at the end step from the stored weights, then
    walks backward reweighting each earlier marginal by the kinematic
    transition density into the sampled next state. Only kinematic states
    are smoothed; the returned extents are the per-step filtered means.
    Returns ``(kin, extent, degenerate)``. Draws whose backward weights
    vanish fall back to the stored means and set the degenerate flag.
    """
    if n_draws <= 0:
        raise ValueError("n_draws must be positive")
    snaps = {k: marginals.get(comp_id, k) for k in range(start, end + 1)}
    for k, snap in snaps.items():
        if snap.kin is None:
            raise ValueError("backward pass needs full stored marginals")

    n_steps = end - start + 1
    sum_kin = np.zeros((n_steps, models.KIN_DIM))
    ext = np.stack([snaps[k].ext_mean for k in range(start, end + 1)])

    snap = snaps[end]
    idx = linalg.sample_categorical(snap.weights, rng, size=n_draws)
    cur_kin = np.array(snap.kin[idx])
    sum_kin[-1] = cur_kin.sum(axis=0)

    active = np.ones(n_draws, dtype=bool)
    degenerate = False
    for k in range(end - 1, start - 1, -1):
        snap = snaps[k]
        t = k - start
        act = np.where(active)[0]
        if act.size:
            with np.errstate(divide="ignore"):
                logw = np.log(snap.weights)[None, :]
            logw = logw + models.transition_logpdf_kinematic(
                cur_kin[act][:, None, :], snap.kin, params)
            row_max = logw.max(axis=1)
            dead_rows = ~np.isfinite(row_max)
            if dead_rows.any():
                degenerate = True
                active[act[dead_rows]] = False
                act = act[~dead_rows]
                logw = logw[~dead_rows]
                row_max = row_max[~dead_rows]
            if act.size:
                probs = np.exp(logw - row_max[:, None])
                cum = np.cumsum(probs, axis=1)
                u = rng.gen.random(act.size) * cum[:, -1]
                picks = np.array([int(np.searchsorted(cum[i], u[i],
                                                      side="right"))
                                  for i in range(act.size)])
                picks = np.minimum(picks, snap.kin.shape[0] - 1)
                cur_kin[act] = snap.kin[picks]
                sum_kin[t] += cur_kin[act].sum(axis=0)
        n_inactive = n_draws - act.size
        if n_inactive:
            sum_kin[t] += n_inactive * snap.kin_mean
    return sum_kin / n_draws, ext, degenerate


# ---------------------------------------------------------------------------
# the filter


class TpmbFilter:
    """Stateful filter driving prediction, update, pruning, and estimation.

    ``predict()`` and ``update(zs)`` are separate so callers can inspect the
    predicted density (for example the expected number of undetected
    objects before a measurement arrives); ``step(zs)`` runs both.
    """

    def __init__(self, params: ModelParams,
                 options: FilterOptions | None = None,
                 rng: RngStream | None = None) -> None:
        self.params = params
        self.options = options if options is not None else FilterOptions()
        self.rng = rng if rng is not None else RngStream(0)
        if self.options.scalar_ppp:
            self.density = PmbDensity(0, [], ppp=None, ppp_scalar=0.0,
                                      ppp_hist=None)
        else:
            hist = PppHistory() if self.options.wants_ppp_history() else None
            self.density = PmbDensity(0, [], ppp=TrajectoryParticles.empty(),
                                      ppp_scalar=None, ppp_hist=hist)
        self.marginals = StoredMarginals()
        self.track_log = (PmbTrackLog(self.options.estimate_threshold)
                          if self.options.variant == "pmb" else None)
        self._known_ids: set = set()
        self._phase = "updated"

    @property
    def step_index(self) -> int:
        return self.density.step

    def predict(self) -> PmbDensity:
        if self._phase != "updated":
            raise RuntimeError("predict called twice without update")
        self.density = predict_density(self.density, self.params,
                                       self.options, self.rng)
        self._phase = "predicted"
        return self.density

    def update(self, zs: np.ndarray) -> PmbDensity:
        if self._phase != "predicted":
            raise RuntimeError("update called before predict")
        step = self.density.step
        opts = self.options
        density = self.density
        frozen = []
        live = []
        if opts.skip_update_below > 0.0:
            for pos, comp in enumerate(density.components):
                mass = comp.alive_mass(step)
                if comp.r * mass < opts.skip_update_below:
                    frozen.append((pos, comp))
                else:
                    live.append(comp)
            density = PmbDensity(step, live, ppp=density.ppp,
                                 ppp_scalar=density.ppp_scalar,
                                 ppp_hist=density.ppp_hist)
        post = bp_update(density, np.asarray(zs, dtype=float), self.params,
                         opts.bp, rng=self.rng.derive("update", step))
        if frozen:
            comps = list(post.components)
            n_live = len(live)
            priors = comps[:n_live]
            for pos, comp in frozen:
                priors.insert(pos, comp)
            post = PmbDensity(step, priors + comps[n_live:], ppp=post.ppp,
                              ppp_scalar=post.ppp_scalar,
                              ppp_hist=post.ppp_hist)

        post, dropped = prune_density(post, opts)
        if opts.variant != "pmb":
            for ident in dropped:
                self.marginals.drop(ident)
        self._record_marginals(post)
        if self.track_log is not None:
            self.track_log.record(post)
        post = resample_density(post, opts, self.rng)
        self.density = post
        self._phase = "updated"
        return post

    def step(self, zs: np.ndarray) -> PmbDensity:
        self.predict()
        return self.update(zs)

    def _record_marginals(self, density: PmbDensity) -> None:
        step = density.step
        full = self.options.variant != "pmb"
        for comp in density.components:
            parts = comp.particles
            alive = parts.alive_mask(step)
            if not alive.any():
                continue
            if comp.id not in self._known_ids:
                self._known_ids.add(comp.id)
                self._backfill(comp, density, alive)
            self.marginals.store(comp.id, step, parts.w[alive],
                                 parts.start[alive], parts.kin[alive],
                                 parts.extent[alive], full=full)

    def _backfill(self, comp: BernoulliComponent, density: PmbDensity,
                  alive: np.ndarray) -> None:
        """Reconstruct pre-detection marginals for a mixture-born component.

        The component's particles are row-aligned copies of the undetected
        mixture, whose per-particle state histories live in the density's
        history record; each earlier step restricts to particles already
        born by then, reusing the posterior weights.
        """
        hist = density.ppp_hist
        if hist is None or self.options.variant == "pmb":
            return
        parts = comp.particles
        starts = parts.start[alive]
        first = int(starts.min())
        if first >= density.step:
            return
        w = parts.w[alive]
        alive_idx = np.where(alive)[0]
        for k in range(first, density.step):
            sel = np.where(starts <= k)[0]
            if sel.size == 0 or w[sel].sum() <= 0.0:
                continue
            rows = alive_idx[sel]
            kin_k = np.stack([hist.kin[r][k - int(parts.start[r])]
                              for r in rows])
            ext_k = np.stack([hist.ext[r][k - int(parts.start[r])]
                              for r in rows])
            self.marginals.store(comp.id, k, w[sel], starts[sel], kin_k,
                                 ext_k, full=True)

    # -- reporting ---------------------------------------------------------

    def estimates(self) -> list[TrajectoryEstimate]:
        if self.track_log is not None:
            return self.track_log.estimates_at(self.density.step,
                                               self.marginals)
        return estimate_trajectories(self.density, self.marginals,
                                     self.options)

    def smoothed_estimates(self, n_draws: int = 100,
                           rng: RngStream | None = None
                           ) -> list[TrajectoryEstimate]:
        """Replace each reported trajectory's states by backward-pass means."""
        if self.options.variant == "pmb":
            raise ValueError("pmb variant stores no full marginals to smooth")
        base = self.estimates()
        out = []
        for est in base:
            sub = (rng if rng is not None
                   else self.rng).derive("smooth", self.density.step, est.id)
            kin, ext, degen = backward_simulate(est.id, est.start, est.end,
                                                self.marginals, self.params,
                                                n_draws, sub)
            out.append(TrajectoryEstimate(est.id, est.start, est.end, kin,
                                          ext, smoothed=True,
                                          degenerate=degen))
        return out

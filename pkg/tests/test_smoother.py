"""Backward-simulation smoother: mechanics plus the RTS oracle comparison.

The mechanics tests drive backward_simulate over hand-built stored
marginals where the correct answer is a specific stored path or mean. The
oracle test runs the full filter on the linear-Gaussian single-object
track from rts_reference and compares filtered and smoothed position
means against the exact Kalman and Rauch-Tung-Striebel posteriors.
Tolerances were calibrated against the observed deviations (roughly 0.1
at 2000 particles) and sit several times above them.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import rts_reference as ref
from bptrack.bp import BpOptions
from bptrack.filters import (
    FilterOptions,
    StoredMarginals,
    TpmbFilter,
    backward_simulate,
)
from bptrack.linalg import RngStream
from bptrack.models import ModelParams
from bptrack.particles import BernoulliComponent, PmbDensity, TrajectoryParticles

IDENT = ("t", 0)


def store_step(marg, step, kin, weights=None, extent=None):
    kin = np.atleast_2d(np.asarray(kin, dtype=float))
    n = kin.shape[0]
    if weights is None:
        weights = np.full(n, 1.0 / n)
    if extent is None:
        extent = np.tile(np.eye(2), (n, 1, 1))
    marg.store(IDENT, step, weights, np.full(n, 1, dtype=int), kin, extent,
               full=True)


def default_params(**kw):
    base = dict(region=((-100.0, 100.0), (-100.0, 100.0)))
    base.update(kw)
    return ModelParams(**base)


class TestBackwardPassMechanics:
    def test_single_particle_per_step_returns_stored_path(self):
        params = default_params()
        marg = StoredMarginals()
        path = []
        x = np.array([0.0, 2.0, 1.0, -1.0])
        for step in range(1, 6):
            path.append(x.copy())
            store_step(marg, step, x)
            x = params.f_mat @ x
        kin, ext, degen = backward_simulate(IDENT, 1, 5, marg, params,
                                            n_draws=7, rng=RngStream(1))
        assert not degen
        # averaging n identical draws costs one rounding step
        assert_allclose(kin, np.array(path), rtol=0, atol=1e-14)
        assert_allclose(ext, np.tile(np.eye(2), (5, 1, 1)), rtol=0)

    def test_one_draw_walks_stored_support(self):
        params = default_params()
        marg = StoredMarginals()
        gen = np.random.default_rng(3)
        stored = {}
        for step in range(1, 5):
            kin = gen.normal(scale=2.0, size=(3, 4))
            kin[:, 0] += step
            stored[step] = kin
            store_step(marg, step, kin, weights=[0.5, 0.3, 0.2])
        kin, _, degen = backward_simulate(IDENT, 1, 4, marg, params,
                                          n_draws=1, rng=RngStream(4))
        assert not degen
        for step in range(1, 5):
            row = kin[step - 1]
            hits = np.all(stored[step] == row, axis=1)
            assert hits.any()

    def test_unreachable_past_falls_back_to_stored_means(self):
        params = default_params()
        marg = StoredMarginals()
        store_step(marg, 1, np.array([[0.0, 1.0, 0.0, 1.0],
                                      [1.0, 1.0, 1.0, 1.0]]))
        # squared distances overflow to inf, so every backward weight at
        # step 2 vanishes and the walk cannot continue
        store_step(marg, 2, np.array([[1e200, 0.0, 1e200, 0.0],
                                      [1e200, 1.0, 1e200, 1.0]]))
        store_step(marg, 3, np.array([[0.4, 1.0, 0.4, 1.0],
                                      [0.6, 1.0, 0.6, 1.0]]))
        with np.errstate(over="ignore"):
            kin, _, degen = backward_simulate(IDENT, 1, 3, marg, params,
                                              n_draws=5, rng=RngStream(5))
        assert degen
        assert_allclose(kin[0], marg.get(IDENT, 1).kin_mean, rtol=0)
        assert_allclose(kin[1], marg.get(IDENT, 2).kin_mean, rtol=0)

    def test_extents_copy_filtered_means(self):
        # only kinematics are smoothed; extents stay the filtering output
        params = default_params()
        marg = StoredMarginals()
        gen = np.random.default_rng(6)
        for step in range(1, 4):
            kin = gen.normal(size=(2, 4))
            extent = np.stack([np.diag([1.0, 2.0]), np.diag([5.0, 3.0])])
            store_step(marg, step, kin, weights=[0.9, 0.1], extent=extent)
        _, ext, _ = backward_simulate(IDENT, 1, 3, marg, params,
                                      n_draws=50, rng=RngStream(7))
        expected = 0.9 * np.diag([1.0, 2.0]) + 0.1 * np.diag([5.0, 3.0])
        for step in range(3):
            assert_allclose(ext[step], expected, rtol=1e-12)

    def test_rejects_nonpositive_draws(self):
        marg = StoredMarginals()
        store_step(marg, 1, np.zeros(4))
        with pytest.raises(ValueError, match="positive"):
            backward_simulate(IDENT, 1, 1, marg, default_params(),
                              n_draws=0, rng=RngStream(8))

    def test_requires_full_snapshots(self):
        marg = StoredMarginals()
        marg.store(IDENT, 1, [1.0], [1], np.zeros((1, 4)), np.eye(2)[None],
                   full=False)
        with pytest.raises(ValueError, match="full stored marginals"):
            backward_simulate(IDENT, 1, 1, marg, default_params(),
                              n_draws=3, rng=RngStream(9))

    def test_pmb_variant_refuses_smoothing(self):
        filt = TpmbFilter(default_params(), FilterOptions(variant="pmb"),
                          RngStream(10))
        with pytest.raises(ValueError, match="pmb"):
            filt.smoothed_estimates()


class TestStoredMarginalsWindow:
    def test_window_drops_old_snapshots(self):
        marg = StoredMarginals(window=3)
        for step in range(1, 7):
            store_step(marg, step, np.full(4, float(step)))
        assert marg.first_step(IDENT) == 4
        assert marg.last_step(IDENT) == 6
        assert not marg.has(IDENT, 3)
        assert marg.has(IDENT, 4)

    def test_default_keeps_everything(self):
        marg = StoredMarginals()
        for step in range(1, 7):
            store_step(marg, step, np.full(4, float(step)))
        assert marg.first_step(IDENT) == 1

    def test_window_validation(self):
        with pytest.raises(ValueError, match="window"):
            StoredMarginals(window=0)


def run_seeded_filter(frames, seed, n_particles=2000, n_draws=300):
    """Track the reference scenario from a particle cloud drawn from the
    same Gaussian prior the Kalman reference starts from."""
    params = ModelParams(gamma=ref.GAMMA, clutter_rate=0.1, birth_rate=1e-6,
                         p_survival=0.999, q=1e9,
                         birth_extent_mean=ref.EXTENT,
                         region=((-100.0, 100.0), (-100.0, 100.0)))
    opts = FilterOptions(scalar_ppp=True, particle_cap=n_particles,
                         bp=BpOptions(meas_driven_birth=True,
                                      proposal_particles=100))
    rng = RngStream(seed)
    chol = np.linalg.cholesky(ref.P0)
    kin0 = ref.X0 + rng.gen.standard_normal((n_particles, 4)) @ chol.T
    ext0 = np.tile(ref.EXTENT, (n_particles, 1, 1))
    parts = TrajectoryParticles.fresh(
        0, kin0, ext0, np.full(n_particles, 1.0 / n_particles))
    filt = TpmbFilter(params, opts, rng)
    filt.density = PmbDensity(0, [BernoulliComponent(("init", 0), 0.999,
                                                     parts)],
                              ppp=None, ppp_scalar=0.0)
    for zs in frames:
        filt.step(zs)
    ests = filt.estimates()
    assert len(ests) == 1
    smoothed = filt.smoothed_estimates(n_draws=n_draws)
    return ests[0], smoothed[0]


class TestAgainstRtsOracle:
    def test_filtered_and_smoothed_match_reference(self):
        truth, frames = ref.simulate_track(101)
        kf_means, rts_means = ref.kalman_rts(frames)
        est, smoothed = run_seeded_filter(frames, seed=501)

        assert (est.start, est.end) == (1, ref.K_STEPS)
        assert (smoothed.start, smoothed.end) == (1, ref.K_STEPS)
        assert smoothed.smoothed and not smoothed.degenerate

        pos = [0, 2]
        filt_dev = est.kin[:, pos] - kf_means[:, pos]
        smooth_dev = smoothed.kin[:, pos] - rts_means[:, pos]
        assert np.abs(filt_dev).max() < 0.4
        assert np.abs(smooth_dev).max() < 0.4

        truth_pos = truth[:, pos]
        rmse_filt = np.sqrt(((est.kin[:, pos] - truth_pos) ** 2).mean())
        rmse_smooth = np.sqrt(((smoothed.kin[:, pos] - truth_pos) ** 2).mean())
        rmse_rts = np.sqrt(((rts_means[:, pos] - truth_pos) ** 2).mean())
        assert rmse_smooth < rmse_filt
        assert abs(rmse_smooth - rmse_rts) < 0.12

    def test_smoothed_extents_equal_filtered_extents(self):
        _, frames = ref.simulate_track(102)
        est, smoothed = run_seeded_filter(frames, seed=502, n_draws=40)
        assert_allclose(smoothed.extent, est.extent, rtol=0)

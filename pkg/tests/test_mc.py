import math

import numpy as np
import pytest
from scipy import stats

from kaclayer import lattice as lt
from kaclayer import mc
from kaclayer.errors import DomainError, SizeError


@pytest.fixture(scope="module")
def tiny():
    kernel = lt.build_kernel(0.5)
    box = lt.SpinConfig.rect_union(2, 1, 2, 2, boundary="plus")
    return box, kernel


class TestSampler:
    def test_zero_field_acceptance_half(self, tiny):
        # an isolated pairless site with a free boundary sees no field;
        # the heat-bath flip probability is exactly 1/2
        cfg = lt.SpinConfig.from_sites([(0, 0)], [1], ell_plus=4, boundary="free")
        sampler = mc.Sampler(cfg, lt.build_kernel(0.5), 0.4, seed=1)
        assert sampler.local_field(0) == 0.0
        flips = 0
        n = 40_000
        for _ in range(n):
            before = sampler.spins[0, 0]
            sampler.update_batch(np.array([0]), sampler.rng.random(1))
            flips += sampler.spins[0, 0] != before
        assert flips / n == pytest.approx(0.5, abs=0.02)

    def test_pair_exact_law(self):
        cfg = lt.SpinConfig.from_sites([(0, 0), (0, 1)], [1, 1], ell_plus=8,
                                       boundary="free")
        kernel = lt.build_kernel(0.5)
        probs, _ = mc.exact_distribution(cfg, kernel, 0.5)
        w = math.exp(0.5)
        z = 2 * w + 2 / w
        expected = np.array([w, 1 / w, 1 / w, w]) / z
        assert np.allclose(probs, expected, atol=1e-14)
        sampler = mc.Sampler(cfg, kernel, 0.5, seed=7)
        counts = np.zeros(4)
        steps = 300_000
        idx = sampler.rng.integers(0, 2, size=steps)
        us = sampler.rng.random(steps)
        for i in range(steps):
            sampler.update_batch(idx[i : i + 1], us[i : i + 1])
            counts[sampler.state_index()] += 1
        freq = counts / counts.sum()
        # within 3 sigma of the exact law per state
        sig = np.sqrt(expected * (1 - expected) * 4 / steps)  # crude tau ~ 4
        assert np.all(np.abs(freq - expected) <= 3 * sig + 5e-3)

    def test_single_layer_ignores_eps(self):
        cfg = lt.SpinConfig.from_sites(
            [(x, 0) for x in range(8)], [1] * 8, ell_plus=8, boundary="free"
        )
        kernel = lt.build_kernel(0.25)
        a = mc.Sampler(cfg, kernel, 0.0, seed=3)
        b = mc.Sampler(cfg, kernel, 0.9, seed=3)
        for _ in range(50):
            a.sweep()
            b.sweep()
        assert np.array_equal(a.spins, b.spins)

    def test_incremental_audit_exact(self, tiny):
        box, kernel = tiny
        sampler = mc.Sampler(box, kernel, 0.3, seed=11)
        for _ in range(2_000):
            sampler.sweep()
        assert sampler.audit_fields()

    def test_energy_decreases_from_hot_start(self, tiny):
        # not a physical law, just a smoke check that flips follow the field:
        # quenching a random start under plus boundary raises magnetization
        box, kernel = tiny
        rng = np.random.default_rng(0)
        box = lt.SpinConfig.rect_union(2, 1, 2, 2, boundary="plus")
        box.spins = np.where(box.mask,
                             rng.choice([-1, 1], size=box.mask.shape).astype(np.int8),
                             0)
        sampler = mc.Sampler(box, kernel, 0.4, seed=5)
        start_mag = sampler.spins[sampler.site_y, sampler.site_x].mean()
        mags = []
        for _ in range(3_000):
            sampler.sweep()
            mags.append(sampler.spins[sampler.site_y, sampler.site_x].mean())
        assert np.mean(mags[-500:]) > start_mag


class TestChains:
    def test_seed_determinism(self):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        cfg = mc.ChainConfig(rect_cols=1, rect_rows=1, params=params, eps=0.2,
                             boundary="plus", seed=5, sweeps=40, burn_in=5)
        a = mc.run_chain(cfg)
        b = mc.run_chain(cfg)
        assert a.stream == b.stream
        assert a.mean_center_spin == b.mean_center_spin

    def test_mirror_exact(self):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        cfg = mc.ChainConfig(rect_cols=1, rect_rows=1, params=params, eps=0.2,
                             boundary="plus", seed=3, sweeps=60, burn_in=10)
        plus, minus = mc.mirrored_pair(cfg)
        assert plus.mean_center_spin == -minus.mean_center_spin
        for a, b in zip(plus.stream, minus.stream):
            assert a[0] == b[0]
            assert a[1] == -b[1]
            assert a[2] == -b[2]

    def test_checkpoint_resume_bit_identical(self):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        kernel = lt.build_kernel(params.gamma)
        cfg = mc.ChainConfig(rect_cols=1, rect_rows=1, params=params, eps=0.2,
                             boundary="plus", seed=9, sweeps=30, burn_in=5)
        _, sampler = mc.run_chain(cfg, kernel=kernel, return_sampler=True)
        chk = sampler.checkpoint(sweep_index=30)
        box = lt.SpinConfig.rect_union(1, 1, params.ell_plus, params.block_rows,
                                       boundary="plus")
        fresh = mc.Sampler(box, kernel, 0.2, seed=9)
        fresh.restore(chk)
        for _ in range(20):
            sampler.sweep()
            fresh.sweep()
        assert np.array_equal(sampler.spins, fresh.spins)
        assert sampler.state_index() == fresh.state_index()

    def test_label_tracking(self):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        cfg = mc.ChainConfig(rect_cols=3, rect_rows=3, params=params, eps=0.5,
                             boundary="plus", seed=21, sweeps=30, burn_in=10,
                             m_eps=0.81, track_labels=True)
        obs = mc.run_chain(cfg)
        hist = obs.label_histogram["eta"]
        n_blocks = sum(hist.values())
        # 9 rectangles, ell_plus/ell_minus = 16 blocks across, 4 rows each
        assert n_blocks == obs.n_samples * 3 * 3 * (64 // 4) * 4
        assert obs.contour_census is not None

    def test_labels_skipped_when_undefined(self):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        cfg = mc.ChainConfig(rect_cols=1, rect_rows=1, params=params, eps=0.0,
                             boundary="plus", seed=2, sweeps=20, burn_in=5,
                             m_eps=None, track_labels=True)
        obs = mc.run_chain(cfg)
        assert obs.label_histogram is None

    def test_config_validation(self):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        with pytest.raises(DomainError):
            mc.ChainConfig(rect_cols=1, rect_rows=1, params=params, eps=0.1,
                           sweeps=10, burn_in=20)


class TestEnumeration:
    def test_unconstrained_ratio_is_one(self, tiny):
        box, kernel = tiny
        full = mc.enumerate_partition(box, kernel, 0.2)
        same = mc.enumerate_partition(box, kernel, 0.2,
                                      constraint=lambda s: np.ones(len(s), bool))
        assert full == pytest.approx(same, abs=1e-12)

    def test_free_kernelless_counting(self):
        # degenerate: no couplings at all -> Z = 2^N
        cfg = lt.SpinConfig.from_sites(
            [(10 * k, 0) for k in range(6)], [1] * 6, ell_plus=64,
            boundary="free",
        )
        kernel = lt.build_kernel(0.5)   # reach 2 << site spacing
        log_z = mc.enumerate_partition(cfg, kernel, 0.0)
        assert log_z == pytest.approx(6 * math.log(2), abs=1e-12)

    def test_size_cap(self):
        cfg = lt.SpinConfig.rect_union(4, 2, 2, 2, boundary="plus")
        with pytest.raises(SizeError):
            mc.enumerate_partition(cfg, lt.build_kernel(0.5), 0.1)

    def test_event_frequency_matches_enumeration(self, tiny):
        box, kernel = tiny
        eps = 0.25

        def event(spins):
            return spins[:, 0] > 0     # first member site up

        log_za = mc.enumerate_partition(box, kernel, eps, constraint=event)
        log_z = mc.enumerate_partition(box, kernel, eps)
        p_exact = math.exp(log_za - log_z)
        sampler = mc.Sampler(box, kernel, eps, seed=31)
        hits = 0
        sweeps = 60_000
        x0, y0 = sampler.site_x[0], sampler.site_y[0]
        for _ in range(sweeps):
            sampler.sweep()
            hits += sampler.spins[y0, x0] > 0
        freq = hits / sweeps
        se = math.sqrt(p_exact * (1 - p_exact) / sweeps) * 3  # tau ~ 9
        assert abs(freq - p_exact) <= 3 * se + 0.01

    def test_stationary_chi_square(self, tiny):
        box, kernel = tiny
        probs, _ = mc.exact_distribution(box, kernel, 0.3)
        sampler = mc.Sampler(box, kernel, 0.3, seed=42)
        counts = np.zeros(len(probs))
        for _ in range(8_000):
            for _ in range(6):   # thin to decorrelate the draws
                sampler.sweep()
            counts[sampler.state_index()] += 1
        expected = probs * counts.sum()
        merge = expected >= 5
        obs = np.concatenate([counts[merge], [counts[~merge].sum()]])
        exp = np.concatenate([expected[merge], [expected[~merge].sum()]])
        _, p = stats.chisquare(obs, exp)
        assert p > 0.001

import math

import numpy as np
import pytest

from kaclayer import functional as fn
from kaclayer import lattice as lt
from kaclayer import meanfield as mf
from kaclayer.errors import ConstraintError, ContractionViolation, DomainError
from kaclayer.regions import (
    BoundaryField,
    Profile,
    Region,
    collar_boundary,
    region_sites_set,
)

EPS = 0.05


@pytest.fixture(scope="module")
def eq():
    rep = mf.solve_magnetization(EPS)
    cd = mf.contraction_data(EPS, m_eps=rep.m_eps)
    return rep, cd


class TestRegions:
    def test_rectangle_union_partner_closure(self):
        reg = Region.from_rectangles([(0, 0), (1, 0), (1, 1)], 8, 4)
        assert reg.n_sites == 3 * 32
        # partner is an involution (validated in the constructor) and
        # vertical: same x, adjacent row
        for t in range(reg.n_sites):
            p = reg.partner[t]
            assert reg.xs[p] == reg.xs[t]
            assert abs(reg.rows[p] - reg.rows[t]) == 1

    def test_odd_column_block_staggered(self):
        reg = Region.from_rectangles([(0, 0), (1, 0)], 8, 4)
        rows_even = set(reg.rows[reg.xs < 8].tolist())
        rows_odd = set(reg.rows[reg.xs >= 8].tolist())
        assert rows_even == {0, 1, 2, 3}
        assert rows_odd == {1, 2, 3, 4}

    def test_interval_pairing(self):
        reg = Region.two_layer_interval(4, 6)
        low, high = reg.pair_indices()
        assert len(low) == 6
        assert np.all(reg.xs[low] == reg.xs[high])

    def test_serialization(self):
        reg = Region.from_rectangles([(0, 0), (2, 1)], 8, 4)
        back = Region.from_dict(reg.to_dict())
        assert np.array_equal(back.xs, reg.xs)
        assert np.array_equal(back.rows, reg.rows)
        prof = Profile(reg, np.linspace(-0.5, 0.5, reg.n_sites))
        back_p = Profile.from_dict(prof.to_dict())
        assert np.array_equal(back_p.values, prof.values)

    def test_profile_validation(self):
        reg = Region.two_layer_interval(0, 4)
        with pytest.raises(DomainError):
            Profile(reg, np.full(reg.n_sites, 1.5))


class TestLpEnergy:
    def test_zero_profile(self, kernel16):
        reg = Region.two_layer_interval(0, 32)
        val = fn.lp_energy(Profile.constant(reg, 0.0), None, kernel16, EPS)
        assert val == pytest.approx(
            -reg.n_sites / 2 * math.log(4 * math.cosh(EPS)), rel=1e-12
        )

    def test_flip_symmetry(self, kernel16):
        rng = np.random.default_rng(3)
        reg = Region.from_rectangles([(0, 0), (1, 0)], 64, 4)
        prof = Profile(reg, rng.uniform(-0.8, 0.8, reg.n_sites))
        bnd = collar_boundary(reg, kernel16.reach,
                              fn=lambda x, r: float(rng.uniform(-0.9, 0.9)))
        assert fn.lp_energy(prof, bnd, kernel16, EPS) == pytest.approx(
            fn.lp_energy(prof.flipped(), bnd.flipped(), kernel16, EPS), abs=1e-10
        )

    def test_constant_equilibrium_identities(self, eq, kernel16):
        rep, _ = eq
        reg = Region.from_rectangles([(0, 0), (1, 0)], 64, 4)
        prof = Profile.constant(reg, rep.m_eps)
        fstar = fn.bulk_energy(prof, kernel16, EPS)
        assert fstar == pytest.approx(rep.f_eq * reg.n_sites / 2, abs=1e-9)
        bnd = collar_boundary(reg, kernel16.reach, value=rep.m_eps)
        exterior_mass = 1.0 - fn.exposure_weights(reg, reg, kernel16)
        predicted = fstar - 0.5 * rep.m_eps**2 * exterior_mass.sum()
        assert fn.lp_energy(prof, bnd, kernel16, EPS) == pytest.approx(
            predicted, abs=1e-9
        )

    def test_domain_guard(self, kernel16):
        reg = Region.two_layer_interval(0, 4)
        with pytest.raises(DomainError):
            fn.lp_energy(Profile(reg, np.full(reg.n_sites, 1.0)), None,
                         kernel16, EPS)

    def test_exposure_vanishes_far_from_bulk(self, kernel16):
        region = Region.from_rectangles([(0, 0)], 64, 4)
        bulk = Region.from_rectangles([(2, 0)], 64, 4)
        a = fn.exposure_weights(region, bulk, kernel16)
        # nearest bulk column is 64 away; kernel reach is 16
        assert np.all(a == 0)


class TestDecomposition:
    def test_identity_simple_geometry(self, kernel16):
        rng = np.random.default_rng(7)
        sp = [(k, j) for k in range(3) for j in range(3)]
        din = [r for r in sp if r != (1, 1)]
        geom = fn.ContourGeometry(ell_plus=64, block_rows=4,
                                  sp_rects=tuple(sorted(sp)),
                                  delta_in_rects=tuple(sorted(din)))
        spr = geom.sp_region()
        prof = Profile(spr, rng.uniform(-0.7, 0.7, spr.n_sites))
        bext = collar_boundary(spr, kernel16.reach,
                               fn=lambda x, r: float(rng.uniform(-0.9, 0.9)))
        lhs, rhs, terms = fn.decomposition_terms(geom, prof, bext, [], kernel16, EPS)
        assert abs(lhs - rhs) < 1e-9
        assert set(terms) == {"bulk", "cross", "collar_ext"}
        assert terms["cross"] >= 0

    def test_identity_with_hole(self, kernel16):
        rng = np.random.default_rng(17)
        sp = [(k, j) for k in range(7) for j in range(7) if (k, j) != (3, 3)]
        din = [(k, j) for k, j in sp if k in (0, 6) or j in (0, 6)]
        dk = [(k, j) for k, j in sp if max(abs(k - 3), abs(j - 3)) == 1]
        geom = fn.ContourGeometry(
            ell_plus=64, block_rows=4, sp_rects=tuple(sorted(sp)),
            delta_in_rects=tuple(sorted(din)),
            k_components=(fn.KComponent(tuple(sorted(dk)), ((3, 3),), 1),),
        )
        spr = geom.sp_region()
        prof = Profile(spr, rng.uniform(-0.7, 0.7, spr.n_sites))
        bext = collar_boundary(spr, kernel16.reach,
                               fn=lambda x, r: float(rng.uniform(-0.9, 0.9)))
        hole = geom.region(((3, 3),))
        bint = BoundaryField()
        for row, (xs, _) in hole.row_layout().items():
            bint.add_row(row, xs, rng.uniform(-0.9, 0.9, len(xs)))
        keep = {
            (int(x), row) for row in bext.rows() for x in bext.row_data(row)[0]
        } - region_sites_set(hole)
        bext = bext.restrict_to(keep)
        lhs, rhs, _ = fn.decomposition_terms(geom, prof, bext, [bint], kernel16, EPS)
        assert abs(lhs - rhs) < 1e-9

    def test_overlapping_collars_rejected(self):
        sp = [(k, 0) for k in range(3)]
        with pytest.raises(Exception):
            fn.ContourGeometry(
                ell_plus=64, block_rows=4, sp_rects=tuple(sp),
                delta_in_rects=((0, 0), (1, 0)),
                k_components=(fn.KComponent(((1, 0),), ((5, 5),), 1),),
            )


class TestPairMinimizer:
    def test_equilibrium_fixed_point(self, eq):
        rep, cd = eq
        for a in (0.0, 0.3, 0.5):
            pb = fn.PairProblem((1 - a) * rep.m_eps, (1 - a) * rep.m_eps, a, a) \
                if a else fn.PairProblem(rep.m_eps, rep.m_eps)
            sol = fn.minimize_pair(pb, EPS, rep.m_eps, contraction=cd)
            assert abs(sol.m_i - rep.m_eps) < 1e-10
            assert abs(sol.m_ip - rep.m_eps) < 1e-10

    def test_case_classification(self):
        assert fn.PairProblem(0.1, 0.1).case == "i"
        assert fn.PairProblem(0.1, 0.1, 0.2, 0.2).case == "ii"
        assert fn.PairProblem(0.1, 0.1, 0.2, 0.0).case == "iii"
        with pytest.raises(DomainError):
            fn.PairProblem(0.1, 0.1, 0.2, 0.3).case
        with pytest.raises(DomainError):
            fn.PairProblem(0.1, 0.1, 0.7, 0.7)

    def test_case_i_bound(self, eq):
        rep, cd = eq
        delta = 0.02
        pb = fn.PairProblem(rep.m_eps + delta, rep.m_eps - delta)
        sol = fn.minimize_pair(pb, EPS, rep.m_eps, contraction=cd)
        assert sol.bound_ok
        bound = cd.R @ np.array([delta, delta])
        assert abs(sol.m_i - rep.m_eps) <= bound[0] + 1e-12

    def test_oracle_agreement_spot_checks(self, eq):
        rep, cd = eq
        rng = np.random.default_rng(11)
        for case in ("i", "ii", "iii"):
            d1, d2 = rng.uniform(-0.03, 0.03, 2)
            if case == "i":
                pb = fn.PairProblem(rep.m_eps + d1, rep.m_eps + d2)
            elif case == "ii":
                pb = fn.PairProblem((1 - 0.4) * rep.m_eps + d1,
                                    (1 - 0.4) * rep.m_eps + d2, 0.4, 0.4)
            else:
                pb = fn.PairProblem((1 - 0.25) * rep.m_eps + d1,
                                    rep.m_eps + d2, 0.25, 0.0)
            sol = fn.minimize_pair(pb, EPS, rep.m_eps, contraction=cd)
            # stationarity of the local objective: solve the dual relation
            g1, g2 = mf.gradient12(
                pb.a_i * sol.m_i + pb.lambda_i,
                pb.a_ip * sol.m_ip + pb.lambda_ip, EPS,
            )
            assert abs(g1 - sol.m_i) < 1e-11
            assert abs(g2 - sol.m_ip) < 1e-11
            # and it is a minimum against a local dither
            base = fn.pair_objective(sol.m_i, sol.m_ip, pb, EPS)
            for _ in range(20):
                da, db = rng.uniform(-1e-3, 1e-3, 2)
                assert fn.pair_objective(sol.m_i + da, sol.m_ip + db, pb, EPS) \
                    >= base - 1e-15

    def test_trust_box_violation(self, eq):
        rep, cd = eq
        pb = fn.PairProblem(rep.m_eps + 0.5, rep.m_eps + 0.5)
        with pytest.raises(ContractionViolation):
            fn.minimize_pair(pb, EPS, rep.m_eps, contraction=cd)


class TestStrip:
    def test_equilibrium_boundary_is_fixed(self, eq, kernel16):
        rep, cd = eq
        reg = Region.from_rectangles([(0, 0), (1, 0)], 64, 4)
        bnd = collar_boundary(reg, kernel16.reach, value=rep.m_eps)
        out = fn.minimize_strip(reg, bnd, kernel16, EPS, rep.m_eps, 0.1,
                                contraction=cd)
        assert out.max_deviation == 0.0
        assert out.sweeps == 1

    def test_alternating_boundary(self, eq, kernel16):
        rep, cd = eq
        zeta = 0.1
        reg = Region.from_rectangles([(0, 0), (1, 0), (0, 1), (1, 1)], 64, 4)
        bnd = collar_boundary(
            reg, kernel16.reach,
            fn=lambda x, r: rep.m_eps + zeta * (1 if (x // 4) % 2 == 0 else -1),
        )
        out = fn.minimize_strip(reg, bnd, kernel16, EPS, rep.m_eps, zeta,
                                contraction=cd)
        assert out.max_deviation < zeta
        assert out.decay_ok
        assert fn.pair_refit_residual(out, bnd, kernel16, EPS) < 1e-10

    def test_modes_agree(self, eq, kernel16):
        rep, cd = eq
        zeta = 0.1
        reg = Region.from_rectangles([(0, 0)], 64, 4)
        bnd = collar_boundary(
            reg, kernel16.reach,
            fn=lambda x, r: rep.m_eps + zeta * (1 if (x // 4) % 2 == 0 else -1),
        )
        a = fn.minimize_strip(reg, bnd, kernel16, EPS, rep.m_eps, zeta,
                              contraction=cd, mode="jacobi")
        b = fn.minimize_strip(reg, bnd, kernel16, EPS, rep.m_eps, zeta,
                              contraction=cd, mode="gauss_seidel")
        assert np.max(np.abs(a.profile.values - b.profile.values)) < 1e-9

    def test_minus_phase_flip_equivariance(self, eq, kernel16):
        rep, cd = eq
        zeta = 0.1
        reg = Region.from_rectangles([(0, 0), (1, 0)], 64, 4)
        bnd = collar_boundary(
            reg, kernel16.reach,
            fn=lambda x, r: rep.m_eps + zeta * (1 if (x // 4) % 2 == 0 else -1),
        )
        plus = fn.minimize_strip(reg, bnd, kernel16, EPS, rep.m_eps, zeta,
                                 contraction=cd)
        minus = fn.minimize_strip(reg, bnd.flipped(), kernel16, EPS, rep.m_eps,
                                  zeta, contraction=cd, sign=-1)
        assert np.max(np.abs(minus.profile.values + plus.profile.values)) < 1e-12
        # the minimized objectives agree: Phi^-(mbar) = Phi^+(-mbar)
        assert minus.objective == pytest.approx(plus.objective, abs=1e-9)

    def test_collar_hypothesis_checked(self, eq, kernel16):
        rep, cd = eq
        reg = Region.from_rectangles([(0, 0)], 64, 4)
        bad = collar_boundary(reg, kernel16.reach, value=-rep.m_eps)
        with pytest.raises(ConstraintError):
            fn.minimize_strip(reg, bad, kernel16, EPS, rep.m_eps, 0.1,
                              contraction=cd)

    def test_depths(self, kernel16):
        reg = Region.from_rectangles([(0, 0)], 64, 4)
        depths = fn.mixed_step_depths(reg, kernel16.reach)
        # one rectangle of 4 rows: every site is at most 2 vertical steps out
        assert depths.max() <= 2
        assert depths.min() == 1


class TestMeanConstraint:
    def test_constant_case(self, kernel16):
        reg = Region.two_layer_interval(0, 4)
        bnd = collar_boundary(reg, kernel16.reach, value=0.3)
        rep = fn.multicanonical_minimize(reg, bnd, kernel16, EPS, (0.3, 0.3))
        assert rep.max_deviation < 1e-12
        assert rep.constraint_residual < 1e-12

    def test_asymmetric_target(self, kernel16):
        reg = Region.two_layer_interval(0, 4)
        bnd = collar_boundary(reg, kernel16.reach, value=0.2)
        rep = fn.multicanonical_minimize(reg, bnd, kernel16, EPS, (0.1, 0.35))
        assert rep.constraint_residual < 1e-10
        layout = reg.row_layout()
        rows = sorted(layout)
        m1 = rep.profile.values[layout[rows[0]][1]]
        m2 = rep.profile.values[layout[rows[1]][1]]
        assert m1.mean() == pytest.approx(0.1, abs=1e-10)
        assert m2.mean() == pytest.approx(0.35, abs=1e-10)

    def test_stationarity_against_projected_gradient(self, eq, kernel16):
        rep_eq, _ = eq
        reg = Region.two_layer_interval(0, 16)
        rng = np.random.default_rng(5)
        bnd = collar_boundary(
            reg, kernel16.reach,
            fn=lambda x, r: float(rng.uniform(rep_eq.m_eps - 0.1,
                                              rep_eq.m_eps + 0.1)),
        )
        rep = fn.multicanonical_minimize(reg, bnd, kernel16, EPS,
                                         (rep_eq.m_eps, rep_eq.m_eps))
        vals = rep.profile.values
        _, h1, _ = mf.canonical_free_energy(vals, vals[reg.partner], EPS,
                                            with_field=True)
        grad = np.asarray(h1).copy()
        w = kernel16.full_float_row()
        reach = kernel16.reach
        for row, (xs, idx) in reg.row_layout().items():
            lo, hi = int(xs.min()) - reach, int(xs.max()) + reach + 1
            dense = bnd.dense_row(row, lo, hi)
            dense[xs - lo] = vals[idx]
            grad[idx] -= np.convolve(dense, w, mode="same")[xs - lo]
        for row, (xs, idx) in reg.row_layout().items():
            grad[idx] -= grad[idx].mean()
        assert np.max(np.abs(grad)) < 1e-9

    def test_domain(self, kernel16):
        reg = Region.two_layer_interval(0, 4)
        bnd = collar_boundary(reg, kernel16.reach, value=0.0)
        with pytest.raises(DomainError):
            fn.multicanonical_minimize(reg, bnd, kernel16, EPS, (1.0, 0.0))


class TestExcess:
    def test_constant_profile_zero(self, eq, kernel16):
        rep, _ = eq
        reg = Region.from_rectangles([(0, 0), (1, 0)], 64, 4)
        out = fn.excess_energy_check(
            Profile.constant(reg, rep.m_eps), kernel16, EPS, rep.m_eps,
            0.1, 4, 2.0**-4, 0.5, f_eq=rep.f_eq,
        )
        assert abs(out.excess) < 1e-9
        assert not any(v > 0 for v in out.defects.values())

    def test_interface_and_zero_block(self, eq, kernel16):
        rep, _ = eq
        reg = Region.from_rectangles([(0, 0), (1, 0), (2, 0)], 64, 4)
        vals = np.full(reg.n_sites, rep.m_eps)
        vals[reg.xs // 4 == 20] = -rep.m_eps
        out = fn.excess_energy_check(Profile(reg, vals), kernel16, EPS,
                                     rep.m_eps, 0.1, 4, 2.0**-4, 0.5,
                                     f_eq=rep.f_eq)
        assert out.excess > 0
        assert out.defects["row_interfaces"] > 0
        vals = np.full(reg.n_sites, rep.m_eps)
        vals[reg.xs // 4 == 20] = 0.0
        out = fn.excess_energy_check(Profile(reg, vals), kernel16, EPS,
                                     rep.m_eps, 0.1, 4, 2.0**-4, 0.5,
                                     f_eq=rep.f_eq)
        assert out.excess > 0
        assert out.defects["zero_blocks"] > 0

    def test_smoothness_enforced(self, eq, kernel16):
        rep, _ = eq
        reg = Region.from_rectangles([(0, 0)], 64, 4)
        rng = np.random.default_rng(2)
        vals = rep.m_eps + rng.uniform(-0.5, 0.5, reg.n_sites)
        with pytest.raises(ConstraintError):
            fn.excess_energy_check(Profile(reg, np.clip(vals, -0.9, 0.9)),
                                   kernel16, EPS, rep.m_eps, 0.1, 4,
                                   2.0**-4, 0.5, f_eq=rep.f_eq)


class TestTrialFunction:
    def test_equilibrium_boundary(self, eq, kernel16):
        rep, cd = eq
        sp = [(k, j) for k in range(3) for j in range(3)]
        din = [r for r in sp if r != (1, 1)]
        geom = fn.ContourGeometry(ell_plus=64, block_rows=4,
                                  sp_rects=tuple(sorted(sp)),
                                  delta_in_rects=tuple(sorted(din)))
        bnd = collar_boundary(geom.sp_region(), kernel16.reach, value=rep.m_eps)
        trial = fn.build_trial_function(
            geom, bnd, [], kernel16, EPS, rep.m_eps, 0.1, micro_block=4,
            strip_kwargs={"contraction": cd},
        )
        assert np.max(np.abs(trial.minimizing.values - rep.m_eps)) < 1e-12
        spacing = trial.grid_spacing
        snapped = -1 + round((rep.m_eps + 1) / spacing) * spacing
        assert np.all(trial.quantized.values == pytest.approx(snapped))
        assert trial.jensen_ok

    def test_random_boundary_gaps(self, eq, kernel16):
        rep, cd = eq
        rng = np.random.default_rng(23)
        sp = [(k, j) for k in range(3) for j in range(3)]
        din = [r for r in sp if r != (1, 1)]
        geom = fn.ContourGeometry(ell_plus=64, block_rows=4,
                                  sp_rects=tuple(sorted(sp)),
                                  delta_in_rects=tuple(sorted(din)))
        spr = geom.sp_region()
        bnd = collar_boundary(
            spr, kernel16.reach,
            fn=lambda x, r: float(rep.m_eps + rng.uniform(-0.1, 0.1)),
        )
        trial = fn.build_trial_function(
            geom, bnd, [], kernel16, EPS, rep.m_eps, 0.1, micro_block=4,
            strip_kwargs={"contraction": cd},
        )
        assert trial.jensen_ok
        budget = math.sqrt(2.0**-4) * spr.n_sites
        for gap in trial.gaps.values():
            assert gap <= budget  # fitted constant c = 1 at this scale

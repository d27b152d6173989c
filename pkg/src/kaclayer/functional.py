"""Coarse-grained free-energy functionals on lattice regions and their
constrained minimizers.

Pieces: the full functional with boundary conditioning; its bulk rewrite
(pair free energy plus squared-gradient form) and collar correction; an
exact decomposition of the full functional into bulk + collar + cross
terms over a contour geometry; the two-site pair minimization with its
contraction certificates; the mean-constrained two-layer minimizer
(Lagrange continuation); the strip minimizer with per-depth decay checks;
the excess-energy test for defective profiles; and the trial-function
construction used to compare constrained and unconstrained energies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter1d

from . import meanfield
from .errors import (
    ConstraintError,
    ContractionViolation,
    ConvergenceError,
    DomainError,
    GeometryError,
    NonConvergence,
)
from .meanfield import case_matrix, gradient12, hessian12
from .regions import BoundaryField, Profile, Region, region_sites_set


# ---------------------------------------------------------------------------
# functional evaluation
# ---------------------------------------------------------------------------

def _check_open_domain(values):
    if np.any(np.abs(values) >= 1.0):
        raise DomainError("functional needs |m| < 1 at every site")


def lp_energy(profile: Profile, boundary: Optional[BoundaryField], kernel, eps):
    """Free-energy functional of a profile given boundary values.

    One half of the per-site pair free-energy term (each vertical bond seen
    from both ends), minus the within-region kernel quadratic, minus the
    full-strength coupling to whatever boundary sites are present.
    """
    region = profile.region
    vals = profile.values
    _check_open_domain(vals)
    phi = meanfield.canonical_free_energy(vals, vals[region.partner], eps)
    total = 0.5 * float(np.sum(phi))
    w = kernel.full_float_row()
    reach = kernel.reach
    for row, (xs, idx) in region.row_layout().items():
        lo = int(xs.min()) - reach
        hi = int(xs.max()) + reach + 1
        m_in = np.zeros(hi - lo)
        m_in[xs - lo] = vals[idx]
        conv_in = np.convolve(m_in, w, mode="same")
        total -= 0.5 * float(np.dot(vals[idx], conv_in[xs - lo]))
        if boundary is not None:
            m_bar = boundary.dense_row(row, lo, hi)
            conv_bar = np.convolve(m_bar, w, mode="same")
            total -= float(np.dot(vals[idx], conv_bar[xs - lo]))
    return total


def bulk_energy(profile: Profile, kernel, eps):
    """Bulk rewrite of the functional on a region with no boundary term:
    half the per-site pair free energy plus the quarter squared-gradient
    kernel form.  Equals the functional up to the exact -m^2/2 split."""
    region = profile.region
    vals = profile.values
    _check_open_domain(vals)
    fpair = meanfield.free_energy(vals, vals[region.partner], eps)
    total = 0.5 * float(np.sum(fpair))
    w = kernel.full_float_row()
    reach = kernel.reach
    for row, (xs, idx) in region.row_layout().items():
        lo = int(xs.min()) - reach
        hi = int(xs.max()) + reach + 1
        m_in = np.zeros(hi - lo)
        mask = np.zeros(hi - lo)
        m_in[xs - lo] = vals[idx]
        mask[xs - lo] = 1.0
        conv_v = np.convolve(m_in, w, mode="same")[xs - lo]
        conv_m = np.convolve(mask, w, mode="same")[xs - lo]
        total += 0.5 * float(np.dot(vals[idx] ** 2, conv_m))
        total -= 0.5 * float(np.dot(vals[idx], conv_v))
    return total


def exposure_weights(region: Region, delta0: Optional[Region], kernel):
    """Kernel mass each region site sees inside the bulk set delta0."""
    a = np.zeros(region.n_sites)
    if delta0 is None:
        return a
    w = kernel.full_float_row()
    reach = kernel.reach
    d0_layout = delta0.row_layout()
    for row, (xs, idx) in region.row_layout().items():
        if row not in d0_layout:
            continue
        dxs, _ = d0_layout[row]
        lo = int(min(xs.min(), dxs.min())) - reach
        hi = int(max(xs.max(), dxs.max())) + reach + 1
        mask = np.zeros(hi - lo)
        mask[dxs - lo] = 1.0
        conv = np.convolve(mask, w, mode="same")
        a[idx] = conv[xs - lo]
    return a


def collar_energy(profile: Profile, boundary, kernel, eps, delta0=None):
    """Functional with the bulk-exposure correction: the full functional
    against the given boundary minus half the exposure-weighted m^2."""
    a = exposure_weights(profile.region, delta0, kernel)
    return lp_energy(profile, boundary, kernel, eps) - 0.5 * float(
        np.dot(a, profile.values**2)
    )


def cross_gradient_term(profile: Profile, delta0: Region, boundary, kernel):
    """Half the kernel-weighted squared difference between bulk sites and
    every non-bulk site (region or boundary) in range."""
    region = profile.region
    vals = profile.values
    d0_sites = region_sites_set(delta0)
    w = kernel.full_float_row()
    reach = kernel.reach
    layout = region.row_layout()
    total = 0.0
    for row, (dxs, _) in delta0.row_layout().items():
        lo = int(dxs.min()) - reach
        hi = int(dxs.max()) + reach + 1
        others = np.zeros(hi - lo)
        others_mask = np.zeros(hi - lo)
        if row in layout:
            xs, idx = layout[row]
            inside = (xs >= lo) & (xs < hi)
            for x, t in zip(xs[inside], idx[inside]):
                if (int(x), row) not in d0_sites:
                    others[x - lo] = vals[t]
                    others_mask[x - lo] = 1.0
        if boundary is not None:
            bxs, bvals = boundary.row_data(row)
            sel = (bxs >= lo) & (bxs < hi)
            others[bxs[sel] - lo] = bvals[sel]
            others_mask[bxs[sel] - lo] = 1.0
        conv_v = np.convolve(others, w, mode="same")
        conv_v2 = np.convolve(others**2, w, mode="same")
        conv_m = np.convolve(others_mask, w, mode="same")
        # bulk values of this row
        xs, idx = layout[row]
        in_d0 = np.array([(int(x), row) in d0_sites for x in xs], dtype=bool)
        bx = xs[in_d0]
        bidx = idx[in_d0]
        m = vals[bidx]
        at = bx - lo
        total += 0.5 * float(
            np.sum(m * m * conv_m[at] - 2.0 * m * conv_v[at] + conv_v2[at])
        )
    return total


# ---------------------------------------------------------------------------
# contour geometry for the decomposition
# ---------------------------------------------------------------------------

@dataclass
class KComponent:
    collar_rects: tuple      # rectangles of sp facing this interior
    interior_rects: tuple
    sign: int


@dataclass
class ContourGeometry:
    """Rectangle bookkeeping for the functional decomposition of a contour
    support: bulk rectangles, the collar facing the exterior, and one
    collar + interior pair per hole."""

    ell_plus: int
    block_rows: int
    sp_rects: tuple
    delta_in_rects: tuple
    k_components: tuple = ()

    def __post_init__(self):
        taken = set(self.delta_in_rects)
        for comp in self.k_components:
            overlap = taken & set(comp.collar_rects)
            if overlap:
                raise GeometryError(
                    f"collar layers overlap at {sorted(overlap)}; the "
                    "decomposition needs disjoint collars"
                )
            taken |= set(comp.collar_rects)
        if not taken <= set(self.sp_rects):
            raise GeometryError("collar rectangles must lie inside the support")

    @property
    def delta0_rects(self):
        taken = set(self.delta_in_rects)
        for comp in self.k_components:
            taken |= set(comp.collar_rects)
        return tuple(sorted(set(self.sp_rects) - taken))

    def region(self, rects):
        return Region.from_rectangles(rects, self.ell_plus, self.block_rows)

    def sp_region(self):
        return self.region(self.sp_rects)

    def delta0_region(self):
        rects = self.delta0_rects
        return self.region(rects) if rects else None

    @classmethod
    def from_contour(cls, contour, ell_plus, block_rows):
        comps = []
        for it in contour.interiors:
            comps.append(
                KComponent(
                    collar_rects=tuple(sorted(it.boundary_inside)),
                    interior_rects=tuple(sorted(it.cells)),
                    sign=it.sign,
                )
            )
        return cls(
            ell_plus=ell_plus,
            block_rows=block_rows,
            sp_rects=tuple(sorted(contour.sp)),
            delta_in_rects=tuple(sorted(contour.boundary_in)),
            k_components=tuple(comps),
        )


def decomposition_terms(geom: ContourGeometry, profile: Profile,
                        boundary_ext: BoundaryField, interior_fields, kernel, eps):
    """Both sides of the exact functional decomposition over a contour
    support: full functional on the left; bulk + collar terms + cross
    gradient on the right.  interior_fields maps the k-component position
    to the boundary data living on that interior."""
    sp_region = profile.region
    site_index = sp_region.site_index()
    d0_region = geom.delta0_region()

    merged = BoundaryField()
    for row in boundary_ext.rows():
        xs, vs = boundary_ext.row_data(row)
        merged.add_row(row, xs, vs)
    for bf in interior_fields:
        for row in bf.rows():
            xs, vs = bf.row_data(row)
            merged.add_row(row, xs, vs)

    lhs = lp_energy(profile, merged, kernel, eps)

    def sub_profile(rects):
        reg = geom.region(rects)
        sel = np.array(
            [site_index[(int(x), int(r))] for x, r in zip(reg.xs, reg.rows)]
        )
        return Profile(reg, profile.values[sel])

    terms = {}
    if d0_region is not None:
        terms["bulk"] = bulk_energy(sub_profile(geom.delta0_rects), kernel, eps)
        terms["cross"] = cross_gradient_term(profile, d0_region, merged, kernel)
    else:
        terms["bulk"] = 0.0
        terms["cross"] = 0.0
    terms["collar_ext"] = collar_energy(
        sub_profile(geom.delta_in_rects), boundary_ext, kernel, eps, d0_region
    )
    for pos, comp in enumerate(geom.k_components):
        terms[f"collar_{pos}"] = collar_energy(
            sub_profile(comp.collar_rects),
            interior_fields[pos],
            kernel,
            eps,
            d0_region,
        )
    rhs = sum(terms.values())
    return lhs, rhs, terms


# ---------------------------------------------------------------------------
# two-site pair minimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairProblem:
    """One vertically interacting pair seen through its effective fields
    (lambda) and bulk-exposure weights (a)."""

    lambda_i: float
    lambda_ip: float
    a_i: float = 0.0
    a_ip: float = 0.0

    def __post_init__(self):
        for a in (self.a_i, self.a_ip):
            if not 0.0 <= a <= 0.5:
                raise DomainError("exposure weights lie in [0, 1/2]")

    @property
    def case(self):
        if self.a_i == 0.0 and self.a_ip == 0.0:
            return "i"
        if self.a_i > 0.0 and self.a_ip > 0.0:
            if abs(self.a_i - self.a_ip) > 1e-12:
                raise DomainError(
                    "both-exposed pairs carry equal weights (case ii)"
                )
            return "ii"
        return "iii"


@dataclass
class PairSolution:
    m_i: float
    m_ip: float
    case: str
    C: np.ndarray
    deviation_bound: np.ndarray
    bound_ok: bool
    residual: float


def pair_objective(m_i, m_ip, problem: PairProblem, eps):
    """The local two-site objective the pair minimizer solves."""
    phi = meanfield.canonical_free_energy(m_i, m_ip, eps)
    return (
        phi
        - 0.5 * (problem.a_i * np.asarray(m_i) ** 2 + problem.a_ip * np.asarray(m_ip) ** 2)
        - problem.lambda_i * np.asarray(m_i)
        - problem.lambda_ip * np.asarray(m_ip)
    )


def _pair_velocity(m, t, a, dl, eps, m_eps):
    theta = m_eps + a * (m - m_eps) + t * dl
    d11, d22, d12 = hessian12(theta[0], theta[1], eps)
    k = np.array([[d11, d12], [d12, d22]])
    lhs = np.eye(2) - k @ np.diag(a)
    return np.linalg.solve(lhs, k @ dl)


def minimize_pair(problem: PairProblem, eps, m_eps, contraction=None,
                  rk_steps=100, polish_tol=1e-12, guard=None):
    """Unique minimizer of the two-site objective.

    Case i evaluates the explicit solution; the exposed cases follow the
    continuation path from the equilibrium pair (fixed-step RK4) and then
    polish with the damped fixed point to ``polish_tol``.  The iterate must
    stay within ``guard`` of the equilibrium (ContractionViolation
    otherwise), and the solution is checked against the case coefficient
    bound.
    """
    if contraction is None:
        contraction = meanfield.contraction_data(eps, m_eps=m_eps, eps_max=None)
    if guard is None:
        guard = contraction.c0
    case = problem.case
    a = np.array([problem.a_i, problem.a_ip])
    lam = np.array([problem.lambda_i, problem.lambda_ip])
    lam_eq = (1.0 - a) * m_eps
    dl = lam - lam_eq

    m = np.array([m_eps, m_eps])
    if case == "i":
        m = np.array(gradient12(lam[0], lam[1], eps))
    else:
        h = 1.0 / rk_steps
        for step in range(rk_steps):
            t = step * h
            k1 = _pair_velocity(m, t, a, dl, eps, m_eps)
            k2 = _pair_velocity(m + 0.5 * h * k1, t + 0.5 * h, a, dl, eps, m_eps)
            k3 = _pair_velocity(m + 0.5 * h * k2, t + 0.5 * h, a, dl, eps, m_eps)
            k4 = _pair_velocity(m + h * k3, t + h, a, dl, eps, m_eps)
            m = m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if np.max(np.abs(m - m_eps)) > guard:
                raise ContractionViolation(
                    f"continuation left the trust box at t={t + h:.3f}"
                )

    residual = math.inf
    for _ in range(1000):
        g1, g2 = gradient12(a[0] * m[0] + lam[0], a[1] * m[1] + lam[1], eps)
        new = np.array([float(g1), float(g2)])
        residual = float(np.max(np.abs(new - m)))
        m = new
        if residual <= polish_tol:
            break
    else:
        raise ConvergenceError("pair fixed point did not polish to tolerance")
    if np.max(np.abs(m - m_eps)) > guard:
        raise ContractionViolation("pair solution outside the trust box")

    if case == "iii" and problem.a_i == 0.0:
        # orient the closed forms so index 0 carries the exposure
        c_sw = case_matrix(contraction.R, case, float(a[1]), r=contraction.r)
        perm = np.array([[0, 1], [1, 0]])
        c = perm @ c_sw @ perm
    else:
        a_scalar = float(max(a[0], a[1]))
        c = case_matrix(contraction.R, case, a_scalar, r=contraction.r)
    scale = np.abs(dl) / (1.0 - a)
    bound = c @ scale
    bound_ok = bool(np.all(np.abs(m - m_eps) <= bound + 1e-10))
    return PairSolution(
        m_i=float(m[0]),
        m_ip=float(m[1]),
        case=case,
        C=c,
        deviation_bound=bound,
        bound_ok=bound_ok,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# strip minimizer
# ---------------------------------------------------------------------------

@dataclass
class StripReport:
    profile: Profile
    sweeps: int
    residual: float
    max_deviation: float
    depths: np.ndarray
    decay_ok: bool
    r_used: float
    objective: float
    mode: str


def mixed_step_depths(region: Region, reach):
    """Per-site minimal number of steps to leave the region, one step being
    a horizontal move of at most the kernel reach or a vertical move of 1."""
    x_lo = int(region.xs.min())
    x_hi = int(region.xs.max())
    r_lo = int(region.rows.min())
    r_hi = int(region.rows.max())
    rows = r_hi - r_lo + 3
    cols = x_hi - x_lo + 1 + 2 * reach
    member = np.zeros((rows, cols), dtype=bool)
    member[region.rows - r_lo + 1, region.xs - x_lo + reach] = True
    covered = ~member
    depth = np.zeros((rows, cols), dtype=np.int64)
    d = 0
    while not covered.all():
        d += 1
        c8 = covered.astype(np.uint8)
        grown = (
            maximum_filter1d(c8, size=2 * reach + 1, axis=1)
            | maximum_filter1d(c8, size=3, axis=0)
        ).astype(bool)
        fresh = grown & ~covered
        depth[fresh] = d
        covered |= grown
        if d > rows + cols:
            raise GeometryError("depth dilation failed to terminate")
    return depth[region.rows - r_lo + 1, region.xs - x_lo + reach]


def check_plus_collar(boundary: BoundaryField, ell_minus, m_eps, zeta):
    """The exterior data must look like the plus phase blockwise."""
    for row in boundary.rows():
        xs, vals = boundary.row_data(row)
        blocks = xs // ell_minus
        for b in np.unique(blocks):
            sel = blocks == b
            if sel.sum() == ell_minus:
                avg = float(vals[sel].mean())
                if abs(avg - m_eps) > zeta:
                    raise ConstraintError(
                        f"boundary block (row {row}, block {b}) average "
                        f"{avg:.4f} is not within zeta of m_eps"
                    )


def minimize_strip(region: Region, boundary: BoundaryField, kernel, eps, m_eps,
                   zeta, delta0=None, start=None, tol=1e-12, max_sweeps=10000,
                   mode="jacobi", contraction=None, sign=1,
                   check_collar=True):
    """Fixed point of the pair-wise minimization sweep on a region.

    Every vertical pair is repeatedly replaced by its two-site minimizer
    given the current neighbor fields; sweeps stop when no site moves more
    than ``tol``.  ``mode="jacobi"`` recomputes all fields per sweep
    (vectorized, order-independent); ``mode="gauss_seidel"`` updates pairs
    in row-major order with fresh fields.  A minus-phase problem is solved
    by flipping, minimizing, and flipping back (``sign=-1``).
    """
    if sign == -1:
        rep = minimize_strip(
            region, boundary.flipped(), kernel, eps, m_eps, zeta,
            delta0=delta0, start=None if start is None else start.flipped(),
            tol=tol, max_sweeps=max_sweeps, mode=mode,
            contraction=contraction, sign=1, check_collar=check_collar,
        )
        rep.profile = rep.profile.flipped()
        rep.objective = collar_energy(rep.profile, boundary, kernel, eps, delta0)
        return rep

    if check_collar:
        check_plus_collar(boundary, max(kernel.reach, 1), m_eps, zeta)
    if contraction is None:
        contraction = meanfield.contraction_data(eps, m_eps=m_eps, eps_max=None)

    vals = (
        np.full(region.n_sites, m_eps) if start is None else start.values.copy()
    )
    a = exposure_weights(region, delta0, kernel)
    low, high = region.pair_indices()
    order = np.lexsort((region.xs[low], region.rows[low]))
    low, high = low[order], high[order]
    w = kernel.full_float_row()
    reach = kernel.reach
    layout = region.row_layout()
    windows = {}
    for row, (xs, idx) in layout.items():
        lo = int(xs.min()) - reach
        hi = int(xs.max()) + reach + 1
        windows[row] = (lo, hi, xs, idx, boundary.dense_row(row, lo, hi))

    def field_sweep(current):
        lam = np.zeros(region.n_sites)
        for row, (lo, hi, xs, idx, bdense) in windows.items():
            dense = bdense.copy()
            dense[xs - lo] = current[idx]
            conv = np.convolve(dense, w, mode="same")
            lam[idx] = conv[xs - lo]
        return lam

    def solve_pairs(lam, current):
        m_lo = current[low].copy()
        m_hi = current[high].copy()
        for _ in range(200):
            g1, g2 = gradient12(
                a[low] * m_lo + lam[low], a[high] * m_hi + lam[high], eps
            )
            change = max(
                float(np.max(np.abs(g1 - m_lo))), float(np.max(np.abs(g2 - m_hi)))
            )
            m_lo, m_hi = g1, g2
            if change <= 0.1 * tol:
                break
        return m_lo, m_hi

    sweeps = 0
    residual = math.inf
    if mode == "jacobi":
        for sweeps in range(1, max_sweeps + 1):
            lam = field_sweep(vals)
            m_lo, m_hi = solve_pairs(lam, vals)
            new_vals = vals.copy()
            new_vals[low] = m_lo
            new_vals[high] = m_hi
            residual = float(np.max(np.abs(new_vals - vals)))
            vals = new_vals
            if residual <= tol:
                break
        else:
            raise NonConvergence(
                f"strip sweep residual {residual:.3e} after {max_sweeps} sweeps",
                residual=residual,
            )
    elif mode == "gauss_seidel":
        dense_rows = {
            row: (lo, hi, bdense.copy())
            for row, (lo, hi, xs, idx, bdense) in windows.items()
        }
        for row, (lo, hi, xs, idx, _b) in windows.items():
            dense_rows[row][2][xs - lo] = vals[idx]
        for sweeps in range(1, max_sweeps + 1):
            residual = 0.0
            for t_lo, t_hi in zip(low, high):
                x = int(region.xs[t_lo])
                r_lo_row = int(region.rows[t_lo])
                r_hi_row = int(region.rows[t_hi])
                lam_pair = []
                for t, rr in ((t_lo, r_lo_row), (t_hi, r_hi_row)):
                    lo, hi, dense = dense_rows[rr]
                    seg = dense[x - reach - lo : x + reach + 1 - lo]
                    lam_pair.append(float(np.dot(seg, w)))
                m_pair = np.array([vals[t_lo], vals[t_hi]])
                for _ in range(200):
                    g1, g2 = gradient12(
                        a[t_lo] * m_pair[0] + lam_pair[0],
                        a[t_hi] * m_pair[1] + lam_pair[1],
                        eps,
                    )
                    change = max(abs(g1 - m_pair[0]), abs(g2 - m_pair[1]))
                    m_pair = np.array([float(g1), float(g2)])
                    if change <= 0.1 * tol:
                        break
                residual = max(
                    residual,
                    abs(m_pair[0] - vals[t_lo]),
                    abs(m_pair[1] - vals[t_hi]),
                )
                vals[t_lo], vals[t_hi] = m_pair
                lo, hi, dense = dense_rows[r_lo_row]
                dense[x - lo] = m_pair[0]
                lo, hi, dense = dense_rows[r_hi_row]
                dense[x - lo] = m_pair[1]
            if residual <= tol:
                break
        else:
            raise NonConvergence(
                f"strip sweep residual {residual:.3e} after {max_sweeps} sweeps",
                residual=residual,
            )
    else:
        raise DomainError("mode must be jacobi or gauss_seidel")

    profile = Profile(region, vals)
    depths = mixed_step_depths(region, reach)
    deviations = np.abs(vals - m_eps)
    decay_ok = bool(np.all(deviations <= 2.0 * contraction.r**depths + 1e-12))
    return StripReport(
        profile=profile,
        sweeps=sweeps,
        residual=residual,
        max_deviation=float(deviations.max()),
        depths=depths,
        decay_ok=decay_ok,
        r_used=contraction.r,
        objective=collar_energy(profile, boundary, kernel, eps, delta0),
        mode=mode,
    )


def pair_refit_residual(report: StripReport, boundary, kernel, eps, delta0=None):
    """How much any single pair would still move if re-minimized at the
    reported fixed point (the stationarity certificate)."""
    region = report.profile.region
    vals = report.profile.values
    a = exposure_weights(region, delta0, kernel)
    low, high = region.pair_indices()
    w = kernel.full_float_row()
    reach = kernel.reach
    lam = np.zeros(region.n_sites)
    for row, (xs, idx) in region.row_layout().items():
        lo = int(xs.min()) - reach
        hi = int(xs.max()) + reach + 1
        dense = boundary.dense_row(row, lo, hi)
        dense[xs - lo] = vals[idx]
        conv = np.convolve(dense, w, mode="same")
        lam[idx] = conv[xs - lo]
    m_lo = vals[low].copy()
    m_hi = vals[high].copy()
    for _ in range(300):
        g1, g2 = gradient12(a[low] * m_lo + lam[low], a[high] * m_hi + lam[high], eps)
        change = max(float(np.max(np.abs(g1 - m_lo))), float(np.max(np.abs(g2 - m_hi))))
        m_lo, m_hi = g1, g2
        if change <= 1e-15:
            break
    worst = max(
        float(np.max(np.abs(m_lo - vals[low]))),
        float(np.max(np.abs(m_hi - vals[high]))),
    )
    return worst


# ---------------------------------------------------------------------------
# mean-constrained two-layer minimizer
# ---------------------------------------------------------------------------

@dataclass
class MeanConstraintReport:
    profile: Profile
    lambda_final: np.ndarray
    constraint_residual: float
    max_deviation: float        # sup |m_i(x) - u_i|
    max_dlambda: float          # sup |dlambda/ds| along the path
    newton_iters: int
    objective: float


def multicanonical_minimize(region: Region, boundary: BoundaryField, kernel,
                            eps, u, ds=0.01, inner_tol=1e-12,
                            newton_tol=1e-12):
    """Unique minimizer of the two-layer functional on an interval subject
    to fixed per-layer mean magnetizations u = (u1, u2).

    Lagrange multipliers follow a homotopy from the decoupled uniform
    problem (s=0) to the full one (s=1): the multiplier velocity solves the
    differentiated constraint (RK4 steps of size ds, the inner profile
    re-solved to ``inner_tol`` at every stage), and a final Newton
    projection restores the constraint exactly at s=1.
    """
    u1, u2 = u
    if max(abs(u1), abs(u2)) >= 1.0:
        raise DomainError("mean constraints must have |u_i| < 1")
    if region.kind != "interval":
        raise GeometryError("mean-constrained minimization runs on intervals")
    length = region.n_sites // 2
    row_lo = int(region.rows.min())
    row_hi = int(region.rows.max())
    x0 = int(region.xs.min())
    w = kernel.full_float_row()
    reach = kernel.reach
    lo = x0 - reach
    hi = x0 + length + reach

    bar_lo = boundary.dense_row(row_lo, lo, hi)
    bar_hi = boundary.dense_row(row_hi, lo, hi)
    if np.any(bar_lo[reach : reach + length] != 0) or np.any(
        bar_hi[reach : reach + length] != 0
    ):
        raise GeometryError("boundary data overlaps the interval")
    kap_p = np.convolve(bar_lo + bar_hi, w, mode="same")[reach : reach + length]
    kap_m = np.convolve(bar_hi - bar_lo, w, mode="same")[reach : reach + length]
    kap = np.stack([kap_p, kap_m])           # shape (2, length), +- coords
    kap_bar = kap.mean(axis=1)
    u_pm = np.array([u1 + u2, u2 - u1])

    def conv_interval(m_pm):
        out = np.empty_like(m_pm)
        for c in range(2):
            padded = np.zeros(hi - lo)
            padded[reach : reach + length] = m_pm[c]
            out[c] = np.convolve(padded, w, mode="same")[reach : reach + length]
        return out

    def inner_solve(lam, s, m_start):
        # dual field lam + kappa_bar + s [(kappa - kappa_bar) + J*m]; the
        # equilibrium self-consistency m = 2 grad(pressure)(m) pins the
        # normalization (no extra 1/2 on the field).
        m = m_start.copy()
        for _ in range(500):
            theta = (
                (lam + kap_bar)[:, None]
                + s * (kap - kap_bar[:, None])
                + s * conv_interval(m)
            )
            _, d_p, d_m, _, _, _ = meanfield._parts(theta[0], theta[1], eps)
            new = np.stack([2.0 * d_p, 2.0 * d_m])
            change = float(np.max(np.abs(new - m)))
            m = new
            if change <= inner_tol:
                return m, theta
        raise ConvergenceError("interval inner fixed point stalled")

    def velocity(lam, s, m_start):
        m, theta = inner_solve(lam, s, m_start)
        _, _, _, d_pp, d_mm, d_pm = meanfield._parts(theta[0], theta[1], eps)
        k_sum = np.array(
            [[d_pp.sum(), d_pm.sum()], [d_pm.sum(), d_mm.sum()]]
        )
        theta1 = (kap - kap_bar[:, None]) + conv_interval(m)
        b = np.array(
            [
                float(np.sum(d_pp * theta1[0] + d_pm * theta1[1])),
                float(np.sum(d_pm * theta1[0] + d_mm * theta1[1])),
            ]
        )
        return -np.linalg.solve(k_sum, b), m

    hp0, hm0 = meanfield.dual_field(u_pm[0], u_pm[1], eps)
    lam = np.array([float(hp0), float(hm0)]) - kap_bar
    m = np.tile(u_pm[:, None], (1, length)).astype(float)
    steps = int(round(1.0 / ds))
    max_dlam = 0.0
    for step in range(steps):
        s = step * ds
        v1, m = velocity(lam, s, m)
        v2, _ = velocity(lam + 0.5 * ds * v1, s + 0.5 * ds, m)
        v3, _ = velocity(lam + 0.5 * ds * v2, s + 0.5 * ds, m)
        v4, _ = velocity(lam + ds * v3, s + ds, m)
        lam = lam + (ds / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        max_dlam = max(max_dlam, float(np.max(np.abs(v1))))

    def constraint(lam_try, m_start):
        m_sol, _ = inner_solve(lam_try, 1.0, m_start)
        return m_sol.sum(axis=1) - u_pm * length, m_sol

    newton_iters = 0
    h_res, m = constraint(lam, m)
    delta = 1e-7
    while float(np.max(np.abs(h_res))) > newton_tol * length and newton_iters < 50:
        newton_iters += 1
        jac = np.empty((2, 2))
        for c in range(2):
            probe = lam.copy()
            probe[c] += delta
            h_probe, _ = constraint(probe, m)
            jac[:, c] = (h_probe - h_res) / delta
        lam = lam - np.linalg.solve(jac, h_res)
        h_res, m = constraint(lam, m)

    m1 = (m[0] - m[1]) / 2.0
    m2 = (m[0] + m[1]) / 2.0
    values = np.empty(region.n_sites)
    layout = region.row_layout()
    xs_lo, idx_lo = layout[row_lo]
    xs_hi, idx_hi = layout[row_hi]
    values[idx_lo] = m1[xs_lo - x0]
    values[idx_hi] = m2[xs_hi - x0]
    profile = Profile(region, values)

    resid = max(abs(float(m1.mean()) - u1), abs(float(m2.mean()) - u2))
    max_dev = max(
        float(np.max(np.abs(m1 - u1))), float(np.max(np.abs(m2 - u2)))
    )
    return MeanConstraintReport(
        profile=profile,
        lambda_final=lam,
        constraint_residual=resid,
        max_deviation=max_dev,
        max_dlambda=max_dlam,
        newton_iters=newton_iters,
        objective=lp_energy(profile, boundary, kernel, eps),
    )


# ---------------------------------------------------------------------------
# excess energy of defective profiles
# ---------------------------------------------------------------------------

@dataclass
class ExcessReport:
    excess: float
    bound: float
    ratio: float
    defects: dict


def excess_energy_check(profile: Profile, kernel, eps, m_eps, zeta, ell_minus,
                        gamma, alpha, f_eq=None, smooth_c=1.0):
    """Excess of the bulk energy over its equilibrium value, against the
    per-rectangle mechanism bound.

    The profile must be smooth (site values within smooth_c * gamma^alpha
    of their block averages); its labels must contain a defect unless it is
    exactly the equilibrium profile, in which case the excess vanishes.
    """
    region = profile.region
    block_avg = profile.block_averages(ell_minus)
    tol_smooth = smooth_c * gamma**alpha + 1e-12
    for (row, b), avg in block_avg.items():
        xs, idx = region.row_layout()[row]
        sel = idx[xs // ell_minus == b]
        if np.max(np.abs(profile.values[sel] - avg)) > tol_smooth:
            raise ConstraintError(
                f"profile not smooth at row {row} block {b}"
            )
    labels = profile.eta_labels(ell_minus, m_eps, zeta)
    zeros = sum(1 for v in labels.values() if v == 0)
    interfaces = 0
    rows = {}
    for (row, b), v in labels.items():
        rows.setdefault(row, {})[b] = v
    for row, blocks in rows.items():
        for b, v in blocks.items():
            nb = blocks.get(b + 1)
            if nb is not None and v * nb == -1:
                interfaces += 1
    vertical_mismatch = 0
    low, high = region.pair_indices()
    for t_lo, t_hi in zip(low, high):
        key_lo = (int(region.rows[t_lo]), int(region.xs[t_lo]) // ell_minus)
        key_hi = (int(region.rows[t_hi]), int(region.xs[t_hi]) // ell_minus)
        if labels[key_lo] * labels[key_hi] == -1:
            vertical_mismatch += 1
    vertical_mismatch //= ell_minus  # counted per site pair above
    defects = {
        "zero_blocks": zeros,
        "row_interfaces": interfaces,
        "vertical_mismatch_blocks": vertical_mismatch,
    }

    if f_eq is None:
        f_eq = meanfield.free_energy(m_eps, m_eps, eps)
    excess = bulk_energy(profile, kernel, eps) - 0.5 * f_eq * region.n_sites
    n_rects = max(len(region.rects), 1)
    bound = n_rects * ell_minus * min(gamma**alpha, zeta**2)
    has_defect = any(v > 0 for v in defects.values())
    if has_defect and excess <= 0:
        raise ConstraintError(f"defective profile with non-positive excess {excess}")
    return ExcessReport(
        excess=float(excess), bound=float(bound),
        ratio=float(excess / bound), defects=defects,
    )


# ---------------------------------------------------------------------------
# trial function
# ---------------------------------------------------------------------------

@dataclass
class TrialReport:
    minimizing: Profile          # equilibrium bulk + collar minimizers
    quantized: Profile           # snapped to the fine magnetization grid
    averaged: Profile            # block averages on the fine scale
    energies: dict
    gaps: dict
    jensen_ok: bool
    grid_spacing: float


def _snap_to_grid(values, spacing):
    j = np.round((values + 1.0) / spacing)
    snapped = -1.0 + j * spacing
    return np.clip(snapped, -1.0 + spacing * 1e-9, 1.0 - spacing * 1e-9)


def build_trial_function(geom: ContourGeometry, boundary_ext: BoundaryField,
                         interior_fields, kernel, eps, m_eps, zeta,
                         micro_block, strip_kwargs=None):
    """Three-stage trial profile on a contour support.

    Stage one is the natural candidate: the equilibrium value on the bulk,
    the strip minimizers on each collar.  Stage two snaps to the fine
    magnetization grid (spacing 2/micro_block); stage three averages the
    snapped profile over micro_block-columns (per row), which by convexity
    of the pair free energy can only lower that term (checked).  All three
    energies and their gaps are reported.
    """
    strip_kwargs = dict(strip_kwargs or {})
    sp_region = geom.sp_region()
    site_index = sp_region.site_index()
    values = np.full(sp_region.n_sites, m_eps)

    d0_region = geom.delta0_region()

    def paste(region, vals):
        for x, r, v in zip(region.xs, region.rows, vals):
            values[site_index[(int(x), int(r))]] = v

    din_region = geom.region(geom.delta_in_rects)
    rep = minimize_strip(
        din_region, boundary_ext, kernel, eps, m_eps, zeta,
        delta0=d0_region, **strip_kwargs,
    )
    paste(din_region, rep.profile.values)
    for pos, comp in enumerate(geom.k_components):
        reg_k = geom.region(comp.collar_rects)
        rep_k = minimize_strip(
            reg_k, interior_fields[pos], kernel, eps, m_eps, zeta,
            delta0=d0_region, sign=comp.sign, **strip_kwargs,
        )
        paste(reg_k, rep_k.profile.values)

    merged = BoundaryField()
    for row in boundary_ext.rows():
        xs, vs = boundary_ext.row_data(row)
        merged.add_row(row, xs, vs)
    for bf in interior_fields:
        for row in bf.rows():
            xs, vs = bf.row_data(row)
            merged.add_row(row, xs, vs)

    minimizing = Profile(sp_region, values)
    spacing = 2.0 / micro_block
    quantized = Profile(sp_region, _snap_to_grid(values, spacing))
    averaged_vals = quantized.values.copy()
    for row, (xs, idx) in sp_region.row_layout().items():
        blocks = xs // micro_block
        for b in np.unique(blocks):
            sel = idx[blocks == b]
            averaged_vals[sel] = quantized.values[sel].mean()
    averaged = Profile(sp_region, averaged_vals)

    energies = {
        name: lp_energy(prof, merged, kernel, eps)
        for name, prof in (
            ("minimizing", minimizing),
            ("quantized", quantized),
            ("averaged", averaged),
        )
    }
    gaps = {
        "quantized_vs_minimizing": abs(energies["quantized"] - energies["minimizing"]),
        "averaged_vs_quantized": abs(energies["averaged"] - energies["quantized"]),
    }
    phi_q = np.sum(
        meanfield.canonical_free_energy(
            quantized.values, quantized.partner_values(), eps
        )
    )
    phi_a = np.sum(
        meanfield.canonical_free_energy(
            averaged.values, averaged.partner_values(), eps
        )
    )
    jensen_ok = bool(phi_q >= phi_a - 1e-10)
    return TrialReport(
        minimizing=minimizing,
        quantized=quantized,
        averaged=averaged,
        energies=energies,
        gaps=gaps,
        jensen_ok=jensen_ok,
        grid_spacing=spacing,
    )

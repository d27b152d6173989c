"""Exact thermodynamics of a vertically coupled pair of spin layers.

Everything here is closed-form or a root/transform of a closed form: the
pair pressure, its Legendre transform (the per-column canonical free
energy), the two-layer mean-field free energy and its spontaneous
magnetization, Hessians at the minimizers, the stability gap outside the
equilibrium neighborhoods, and the contraction coefficients that drive the
pair-minimization machinery in :mod:`kaclayer.functional`.

Coordinates: the symmetric/antisymmetric fields ``h_plus = h1 + h2``,
``h_minus = h2 - h1`` diagonalize the pair pressure; magnetizations follow
the same convention (``m_plus = m1 + m2``, ``m_minus = m2 - m1``).  All
public entry points accept either convention through thin wrappers.

All functions are pure; everything vectorizes over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractionViolation, ConvergenceError, DomainError

#: Above this coupling the small-eps expansions asserted by the solvers are
#: not validated; callers must raise the cap explicitly to go higher.
EPS_MAX_DEFAULT = 0.2


class FieldPair(NamedTuple):
    """External field on the two layers in (plus, minus) coordinates."""

    h_plus: float
    h_minus: float

    @property
    def h1(self):
        return (self.h_plus - self.h_minus) / 2.0

    @property
    def h2(self):
        return (self.h_plus + self.h_minus) / 2.0

    @classmethod
    def from_h12(cls, h1, h2):
        return cls(h1 + h2, h2 - h1)


class MagPair(NamedTuple):
    """Layer magnetizations in (plus, minus) coordinates."""

    m_plus: float
    m_minus: float

    @property
    def m1(self):
        return (self.m_plus - self.m_minus) / 2.0

    @property
    def m2(self):
        return (self.m_plus + self.m_minus) / 2.0

    @classmethod
    def from_m12(cls, m1, m2):
        return cls(m1 + m2, m2 - m1)


def check_eps(eps, eps_max=EPS_MAX_DEFAULT):
    if eps < 0:
        raise DomainError(f"vertical coupling must be >= 0, got {eps}")
    if eps_max is not None and eps > eps_max:
        raise DomainError(
            f"eps={eps} above eps_max={eps_max}; the small-eps regime is not "
            "validated there (pass a larger eps_max to override)"
        )


# ---------------------------------------------------------------------------
# pressure and derivatives
# ---------------------------------------------------------------------------

def _parts(h_plus, h_minus, eps):
    """Partition pieces of the single-column pair at field (h_plus, h_minus).

    Returns (Z, d_p, d_m, d_pp, d_mm, d_pm): the normalizer
    Z = e^eps cosh(h+) + e^-eps cosh(h-), first and second derivatives of
    log(2Z).  Note e^eps * e^-eps = 1 makes the cross term -d_p*d_m.
    """
    ep = math.exp(eps)
    em = math.exp(-eps)
    chp = np.cosh(h_plus)
    shp = np.sinh(h_plus)
    chm = np.cosh(h_minus)
    shm = np.sinh(h_minus)
    z = ep * chp + em * chm
    d_p = ep * shp / z
    d_m = em * shm / z
    d_pp = ep * chp / z - d_p * d_p
    d_mm = em * chm / z - d_m * d_m
    d_pm = -d_p * d_m
    return z, d_p, d_m, d_pp, d_mm, d_pm


def pressure(h_plus, h_minus, eps):
    """log of the single-column pair partition function, log(2Z)."""
    ep = math.exp(eps)
    em = math.exp(-eps)
    return np.log(2.0 * (ep * np.cosh(h_plus) + em * np.cosh(h_minus)))


def pressure_gradient(h_plus, h_minus, eps):
    """(d/dh+, d/dh-) of the pressure."""
    _, d_p, d_m, _, _, _ = _parts(h_plus, h_minus, eps)
    return d_p, d_m


def pressure_hessian(h_plus, h_minus, eps):
    """Hessian of the pressure in (h+, h-) plus its determinant.

    The determinant is computed twice: from the matrix entries and from the
    independent closed form
    ``Z^-4 (1 + 2 cosh(2 eps) cosh h+ cosh h- + cosh^2 cosh^2 - sinh^2 sinh^2)``;
    both are returned so callers can cross-check.
    """
    z, _, _, d_pp, d_mm, d_pm = _parts(h_plus, h_minus, eps)
    chp = np.cosh(h_plus)
    shp = np.sinh(h_plus)
    chm = np.cosh(h_minus)
    shm = np.sinh(h_minus)
    det_closed = (
        1.0
        + 2.0 * math.cosh(2.0 * eps) * chp * chm
        + chp * chp * chm * chm
        - shp * shp * shm * shm
    ) / z**4
    hess = np.array([[d_pp, d_pm], [d_pm, d_mm]])
    det_matrix = d_pp * d_mm - d_pm * d_pm
    return hess, det_matrix, det_closed


def pressure12(h1, h2, eps):
    """Pressure in per-layer field coordinates (h1, h2)."""
    return pressure(h1 + h2, h2 - h1, eps)


def gradient12(h1, h2, eps):
    """(d/dh1, d/dh2) of the pressure: the two layer magnetizations."""
    _, d_p, d_m, _, _, _ = _parts(h1 + h2, h2 - h1, eps)
    return d_p - d_m, d_p + d_m


def hessian12(h1, h2, eps):
    """Second derivatives of the pressure in (h1, h2): (d11, d22, d12)."""
    _, _, _, d_pp, d_mm, d_pm = _parts(h1 + h2, h2 - h1, eps)
    d11 = d_pp + d_mm - 2.0 * d_pm
    d22 = d_pp + d_mm + 2.0 * d_pm
    d12 = d_pp - d_mm
    return d11, d22, d12


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------

def _dual_field_bisection(mp, mm, eps, tol, rounds=400):
    """Fallback solver: alternating coordinate bisection.  Each coordinate
    equation is strictly monotone in its own field, so this always
    converges (linearly) on the open square."""
    hp, hm = 0.0, 0.0
    span = 60.0

    def solve_coord(target, other, plus_coord):
        lo, hi = -span, span
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if plus_coord:
                _, d, _, _, _, _ = _parts(mid, other, eps)
            else:
                _, _, d, _, _, _ = _parts(other, mid, eps)
            if 2.0 * d < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    for _ in range(rounds):
        hp = solve_coord(mp, hm, True)
        hm = solve_coord(mm, hp, False)
        _, d_p, d_m, _, _, _ = _parts(hp, hm, eps)
        if max(abs(2.0 * d_p - mp), abs(2.0 * d_m - mm)) <= tol:
            return hp, hm
    raise ConvergenceError("coordinate bisection exhausted its budget, which "
                           "indicates a bug: the dual field exists and is "
                           "unique on the open square")


def dual_field(m_plus, m_minus, eps, tol=1e-12, max_iter=120):
    """Invert m = 2 grad(pressure): the unique field dual to (m+, m-).

    Damped Newton on the strictly convex dual problem; element-wise over
    arrays.  Requires |m1|, |m2| < 1.  Any element Newton fails on falls
    back to alternating coordinate bisection.
    """
    mp = np.asarray(m_plus, dtype=float)
    mm = np.asarray(m_minus, dtype=float)
    m1 = (mp - mm) / 2.0
    m2 = (mp + mm) / 2.0
    if np.any(np.abs(m1) >= 1.0) or np.any(np.abs(m2) >= 1.0):
        raise DomainError("dual field requires |m1| < 1 and |m2| < 1")

    # exact at eps=0, a good global start for small eps
    h1 = np.arctanh(m1)
    h2 = np.arctanh(m2)
    hp = h1 + h2
    hm = h2 - h1

    def resid(hp_, hm_):
        _, d_p, d_m, d_pp, d_mm, d_pm = _parts(hp_, hm_, eps)
        return 2.0 * d_p - mp, 2.0 * d_m - mm, d_pp, d_mm, d_pm

    gp, gm, d_pp, d_mm, d_pm = resid(hp, hm)
    converged = False
    for _ in range(max_iter):
        err = np.maximum(np.abs(gp), np.abs(gm))
        if np.all(err <= tol):
            converged = True
            break
        # Newton step: solve 2*H delta = -g element-wise (H is SPD)
        det = d_pp * d_mm - d_pm * d_pm
        dp_step = -(d_mm * gp - d_pm * gm) / (2.0 * det)
        dm_step = -(d_pp * gm - d_pm * gp) / (2.0 * det)
        step = np.ones_like(dp_step)
        for _halve in range(50):
            hp_try = hp + step * dp_step
            hm_try = hm + step * dm_step
            gp_t, gm_t, d_pp_t, d_mm_t, d_pm_t = resid(hp_try, hm_try)
            err_t = np.maximum(np.abs(gp_t), np.abs(gm_t))
            bad = err_t > err
            if not np.any(bad & (err > tol)):
                break
            step = np.where(bad, step * 0.5, step)
        hp, hm = hp_try, hm_try
        gp, gm, d_pp, d_mm, d_pm = gp_t, gm_t, d_pp_t, d_mm_t, d_pm_t

    if not converged:
        err = np.maximum(np.abs(gp), np.abs(gm))
        hp = np.atleast_1d(np.asarray(hp, dtype=float))
        hm = np.atleast_1d(np.asarray(hm, dtype=float))
        flat_err = np.atleast_1d(err).ravel()
        mp_flat = np.atleast_1d(mp).ravel()
        mm_flat = np.atleast_1d(mm).ravel()
        hp_flat = hp.ravel()
        hm_flat = hm.ravel()
        for t in np.nonzero(flat_err > tol)[0]:
            hp_flat[t], hm_flat[t] = _dual_field_bisection(
                float(mp_flat[t]), float(mm_flat[t]), eps, tol
            )
        hp = hp_flat.reshape(np.shape(mp)) if np.shape(mp) else hp_flat[0]
        hm = hm_flat.reshape(np.shape(mm)) if np.shape(mm) else hm_flat[0]
    return hp, hm


def legendre(m_plus, m_minus, eps):
    """Legendre transform of the pressure at (m+, m-).

    Returns ``(value, FieldPair)`` with
    ``value = (h.m)/2 - pressure(h)`` at the maximizing field h.  The
    round trip ``2 grad(pressure)(h) = m`` is re-checked to 1e-8.
    """
    hp, hm = dual_field(m_plus, m_minus, eps)
    d_p, d_m = pressure_gradient(hp, hm, eps)
    if max(abs(2.0 * float(d_p) - m_plus), abs(2.0 * float(d_m) - m_minus)) > 1e-8:
        raise ConvergenceError("Legendre round trip exceeded 1e-8")
    value = 0.5 * (hp * m_plus + hm * m_minus) - pressure(hp, hm, eps)
    return float(value), FieldPair(float(hp), float(hm))


def canonical_free_energy(m1, m2, eps, with_field=False):
    """Per-column canonical free energy of the pair (Legendre transform in
    per-layer coordinates).  Vectorizes over arrays.

    With ``with_field=True`` also returns the dual per-layer fields.
    """
    m1a = np.asarray(m1, dtype=float)
    m2a = np.asarray(m2, dtype=float)
    hp, hm = dual_field(m1a + m2a, m2a - m1a, eps)
    value = 0.5 * (hp * (m1a + m2a) + hm * (m2a - m1a)) - pressure(hp, hm, eps)
    if np.isscalar(m1) and np.isscalar(m2):
        value = float(value)
    if with_field:
        return value, (hp - hm) / 2.0, (hp + hm) / 2.0
    return value


def free_energy(m1, m2, eps):
    """Two-layer mean-field free energy -(m1^2+m2^2)/2 + canonical term."""
    m1a = np.asarray(m1, dtype=float)
    m2a = np.asarray(m2, dtype=float)
    val = -(m1a * m1a + m2a * m2a) / 2.0 + canonical_free_energy(m1a, m2a, eps)
    if np.isscalar(m1) and np.isscalar(m2):
        return float(val)
    return val


def spin_entropy(m):
    """Entropy of a +-1 spin with mean m; endpoints by continuity (0)."""
    ma = np.asarray(m, dtype=float)
    if np.any(np.abs(ma) > 1.0):
        raise DomainError("entropy defined on [-1, 1]")
    p = (1.0 + ma) / 2.0
    q = (1.0 - ma) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = -np.where(p > 0.0, p * np.log(p), 0.0) - np.where(
            q > 0.0, q * np.log(q), 0.0
        )
    return float(val) if np.isscalar(m) else val


# ---------------------------------------------------------------------------
# spontaneous magnetization
# ---------------------------------------------------------------------------

@dataclass
class MinimizerReport:
    """Result of solving for the spontaneous magnetization at coupling eps."""

    eps: float
    m_eps: float                 # per-layer value; the minimizers are +-(m_eps, m_eps)
    f_eq: float                  # minimum free energy
    hessian: np.ndarray          # D^2 f at the plus minimizer, (m+, m-) coords
    min_eigenvalue: float
    residual: float              # fixed-point residual of the plus equation
    bracket: tuple[float, float]

    def to_dict(self):
        return {
            "eps": self.eps,
            "m_eps": self.m_eps,
            "f_eq": self.f_eq,
            "hessian": self.hessian.tolist(),
            "min_eigenvalue": self.min_eigenvalue,
            "residual": self.residual,
        }


def _aligned_root_function(z, eps):
    """F(z): the aligned fixed-point equation in the variable z = x^2.

    F(z) = e^eps cosh(sqrt z) + e^-eps - 2 e^eps sinh(sqrt z)/sqrt z; the
    positive fixed point of the aligned magnetization equation is the
    (unique, for small eps) root of F on (0, ~12 eps * (1 + O(eps))).
    """
    ep = math.exp(eps)
    em = math.exp(-eps)
    z = np.asarray(z, dtype=float)
    x = np.sqrt(z)
    with np.errstate(invalid="ignore"):
        sinc = np.where(x > 0, np.sinh(x) / np.where(x > 0, x, 1.0), 1.0)
    return ep * np.cosh(x) + em - 2.0 * ep * sinc


def check_antisymmetric_component(eps, y_samples=None):
    """The antisymmetric fixed-point map U pins the odd component to zero:
    U(0) = 0 and |U(y)| < |y| for y > 0.  Returns the max of U(y)/y sampled."""
    ep = math.exp(eps)
    em = math.exp(-eps)
    if y_samples is None:
        y_samples = np.linspace(0.05, 3.0, 60)
    y = np.asarray(y_samples, dtype=float)
    u = 2.0 * em * np.sinh(y) / (ep + em * np.cosh(y))
    if np.any(u >= y):
        raise ConvergenceError("antisymmetric map is not a contraction on the sample")
    return float(np.max(u / y))


def solve_magnetization(eps, eps_max=EPS_MAX_DEFAULT, tol=1e-14):
    """Spontaneous per-layer magnetization m_eps and the equilibrium data.

    Bisection for the root z* of the aligned fixed-point function on the
    bracket [eps, 24 eps] (seeded by the z ~ 12 eps behavior; widened
    geometrically if the sign change is missing).  m_eps = sqrt(z*)/2.
    Also verifies the antisymmetric component vanishes.
    """
    check_eps(eps, eps_max)
    if eps <= 0:
        raise DomainError("spontaneous magnetization needs eps > 0")

    lo, hi = eps, 24.0 * eps
    f_lo = float(_aligned_root_function(lo, eps))
    f_hi = float(_aligned_root_function(hi, eps))
    widen = 0
    while f_lo * f_hi > 0:
        widen += 1
        if widen > 20:
            raise ConvergenceError(
                f"no sign change for the magnetization root near eps={eps}"
            )
        lo /= 2.0
        hi *= 2.0
        f_lo = float(_aligned_root_function(lo, eps))
        f_hi = float(_aligned_root_function(hi, eps))
    bracket = (lo, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, hi):
            break
        f_mid = float(_aligned_root_function(mid, eps))
        if f_mid == 0.0:
            lo = hi = mid
            break
        if f_lo * f_mid < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    z_star = 0.5 * (lo + hi)
    x = math.sqrt(z_star)
    m_eps = x / 2.0

    ep = math.exp(eps)
    em = math.exp(-eps)
    residual = abs(x - 2.0 * ep * math.sinh(x) / (ep * math.cosh(x) + em))
    check_antisymmetric_component(eps)

    hess, eigs = minimizer_hessian(eps, m_eps=m_eps, eps_max=eps_max)
    f_eq = free_energy(m_eps, m_eps, eps)
    return MinimizerReport(
        eps=eps,
        m_eps=m_eps,
        f_eq=f_eq,
        hessian=hess,
        min_eigenvalue=float(np.min(eigs)),
        residual=residual,
        bracket=bracket,
    )


def minimizer_hessian(eps, m_eps=None, eps_max=EPS_MAX_DEFAULT):
    """Hessian of the free energy at the plus minimizer, (m+, m-) coords.

    D^2 f = (1/4) G^-1 (I - 2G) with G the pressure Hessian at the dual
    field of the minimizer, where G is diagonal (the minus field vanishes).
    Asserts 2 G_++ <= 1 - eps/2 and 2 G_-- <= 1 - eps/2, which pin the
    smallest eigenvalue above eps/4.
    """
    if m_eps is None:
        m_eps = solve_magnetization(eps, eps_max=eps_max).m_eps
    h_plus = 2.0 * m_eps  # dual field equals the magnetization at the minimizer
    _, _, _, d_pp, d_mm, d_pm = _parts(h_plus, 0.0, eps)
    if abs(d_pm) > 1e-14:
        raise ConvergenceError("pressure Hessian not diagonal at the minimizer")
    two_gpp = 2.0 * d_pp
    two_gmm = 2.0 * d_mm
    bound = 1.0 - eps / 2.0
    if two_gpp > bound + 1e-12 or two_gmm > bound + 1e-12:
        raise ContractionViolation(
            f"2G = ({two_gpp:.6f}, {two_gmm:.6f}) exceeds 1 - eps/2 = {bound:.6f}"
        )
    eig_p = (1.0 - two_gpp) / (4.0 * d_pp)
    eig_m = (1.0 - two_gmm) / (4.0 * d_mm)
    hess = np.array([[eig_p, 0.0], [0.0, eig_m]])
    return hess, np.array([eig_p, eig_m])


# ---------------------------------------------------------------------------
# stability gap
# ---------------------------------------------------------------------------

@dataclass
class StabilityGap:
    eps: float
    zeta: float
    grid_step: float
    gap: float
    gap_over_zeta_sq: float
    argmin: tuple[float, float]


def stability_gap(eps, zeta, grid_step=None, eps_max=EPS_MAX_DEFAULT):
    """Grid infimum of f - f_eq outside the two equilibrium boxes U_zeta.

    U_zeta is the union of the axis-aligned boxes of half-width zeta/2
    around +-(m_eps, m_eps).  The infimum over the [-0.99, 0.99]^2 grid
    minus U_zeta must be strictly positive.
    """
    report = solve_magnetization(eps, eps_max=eps_max)
    m_eps = report.m_eps
    if not 0.0 < zeta < 2.0 * m_eps:
        raise DomainError(
            f"zeta={zeta} must lie in (0, 2 m_eps={2 * m_eps:.4f}) for the two "
            "equilibrium boxes to be disjoint"
        )
    if grid_step is None:
        grid_step = zeta / 8.0
    if grid_step > zeta / 8.0:
        raise DomainError("grid_step must be <= zeta/8")

    axis = np.arange(-0.99, 0.99 + grid_step / 2.0, grid_step)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    inside = (
        (np.abs(g1 - m_eps) < zeta / 2.0) & (np.abs(g2 - m_eps) < zeta / 2.0)
    ) | ((np.abs(g1 + m_eps) < zeta / 2.0) & (np.abs(g2 + m_eps) < zeta / 2.0))
    vals = free_energy(g1.ravel(), g2.ravel(), eps).reshape(g1.shape)
    vals = np.where(inside, np.inf, vals)
    idx = np.unravel_index(np.argmin(vals), vals.shape)
    gap = float(vals[idx] - report.f_eq)
    if gap <= 0:
        raise ContractionViolation(f"stability gap non-positive: {gap}")
    return StabilityGap(
        eps=eps,
        zeta=zeta,
        grid_step=grid_step,
        gap=gap,
        gap_over_zeta_sq=gap / zeta**2,
        argmin=(float(g1[idx]), float(g2[idx])),
    )


# ---------------------------------------------------------------------------
# contraction coefficients
# ---------------------------------------------------------------------------

@dataclass
class ContractionData:
    eps: float
    c0: float                 # neighborhood size parameter (box has half-width c0/2)
    grid_step: float
    R: np.ndarray             # entrywise sup of |second derivatives| over the box
    r: float                  # max row sum of R
    C: dict                   # (case, a) -> 2x2 coefficient matrix

    def to_dict(self):
        return {
            "eps": self.eps,
            "c0": self.c0,
            "grid_step": self.grid_step,
            "R": self.R.tolist(),
            "r": self.r,
            "C": {f"{case}:{a:g}": mat.tolist() for (case, a), mat in self.C.items()},
        }


def _sup_hessian_entries(eps, m_eps, half_width, grid_step):
    lo = m_eps - half_width
    hi = m_eps + half_width
    n = max(int(math.ceil(2.0 * half_width / grid_step)) + 1, 5)
    axis = np.linspace(lo, hi, n)
    h1, h2 = np.meshgrid(axis, axis, indexing="ij")
    d11, d22, d12 = hessian12(h1.ravel(), h2.ravel(), eps)
    return np.array(
        [
            [float(np.max(np.abs(d11))), float(np.max(np.abs(d12)))],
            [float(np.max(np.abs(d12))), float(np.max(np.abs(d22)))],
        ]
    )


def case_matrix(R, case, a, r=None, tail_tol=1e-12):
    """Coefficient matrix for one pair-minimization case.

    case "i": both self-weights vanish, C = R.
    case "ii": equal self-weights a on both sites; the geometric series
    (1-a) sum_n a^n R^(n+1), truncated once the operator tail bound drops
    below tail_tol.
    case "iii": first site carries weight a, the second none; the closed
    forms from iterating the one-sided relation.
    """
    R = np.asarray(R, dtype=float)
    if r is None:
        r = float(np.max(R.sum(axis=1)))
    if case == "i":
        if a != 0:
            raise DomainError("case i has a = 0")
        return R.copy()
    if not 0.0 < a <= 0.5:
        raise DomainError("cases ii/iii need a in (0, 1/2]")
    if case == "ii":
        term = R.copy()           # a^0 R^1
        total = term.copy()
        n = 0
        while (a ** (n + 1)) * (r ** (n + 2)) / (1.0 - a * r) >= tail_tol:
            n += 1
            term = a * (term @ R)
            total += term
            if n > 10000:
                raise ConvergenceError("case ii series did not truncate")
        return (1.0 - a) * total
    if case == "iii":
        r00, r01 = R[0, 0], R[0, 1]
        r10, r11 = R[1, 0], R[1, 1]
        denom = 1.0 - a * r00
        c = np.empty((2, 2))
        c[0, 0] = r00 * (1.0 - a) / denom
        c[0, 1] = r01 / denom
        c[1, 1] = r11 + a * r10 * r01 / denom
        c[1, 0] = r10 * (a * r00 * (1.0 - a) / denom + (1.0 - a))
        return c
    raise DomainError(f"unknown case {case!r}")


def contraction_data(
    eps,
    c0=None,
    grid_step=None,
    a_values=(0.25, 0.5),
    eps_max=EPS_MAX_DEFAULT,
    m_eps=None,
):
    """Sup of the pressure second derivatives near the minimizer's dual field
    and the derived case coefficient matrices.

    The box is ``|h_i - m_eps| <= c0/2`` in per-layer field coordinates
    (half-width c0/2, the same convention as the stability boxes U_zeta;
    c0 defaults to m_eps/2).  R is computed by a grid sup with a refinement
    pass: the step is halved until no entry moves by more than 1e-4.  Every
    row sum of R must be <= r < 1 or ContractionViolation is raised.
    """
    if m_eps is None:
        m_eps = solve_magnetization(eps, eps_max=eps_max).m_eps
    if c0 is None:
        c0 = m_eps / 2.0
    if c0 <= 0:
        raise DomainError("c0 must be positive")
    half_width = c0 / 2.0
    step = grid_step if grid_step is not None else half_width / 8.0

    R = _sup_hessian_entries(eps, m_eps, half_width, step)
    for _ in range(8):
        step /= 2.0
        R_next = _sup_hessian_entries(eps, m_eps, half_width, step)
        moved = float(np.max(np.abs(R_next - R)))
        R = R_next
        if moved < 1e-4:
            break
    r = float(np.max(R.sum(axis=1)))
    if r >= 1.0:
        raise ContractionViolation(
            f"row sum r={r:.6f} >= 1 for eps={eps}, c0={c0}; the neighborhood "
            "is outside the contracting regime"
        )
    cases = {("i", 0.0): case_matrix(R, "i", 0.0, r=r)}
    for a in a_values:
        for case in ("ii", "iii"):
            mat = case_matrix(R, case, a, r=r)
            rows = mat.sum(axis=1)
            if np.any(rows >= r):
                raise ContractionViolation(
                    f"case {case} a={a}: row sums {rows} not < r={r:.6f}"
                )
            cases[(case, a)] = mat
    return ContractionData(eps=eps, c0=c0, grid_step=step, R=R, r=r, C=cases)

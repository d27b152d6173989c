"""Discrete model layer: Kac kernel, chessboard Hamiltonian, coarse-grained
phase labels on the rectangle partition, contour extraction, and the
contour-counting series.

Kernel weights are exact rationals: integer numerators over an integer
total, normalized to 1 by construction.  Energies are assembled from
integer pair sums and divided once, so independent evaluation orders agree
bit-for-bit (this is also what makes the Monte Carlo incremental-field
audit exact).

Geometry convention: the lattice is partitioned into rectangles of
``ell_plus x block_rows`` sites.  Odd column-blocks are shifted up one row
(half-open at the bottom instead of the top), which is exactly what keeps
every vertical interaction inside its rectangle.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import BoundaryError, DomainError, GeometryError, SizeError, SpecError

_INT_SCALE = 1 << 40  # numerator quantization for user-supplied densities


def quartic_density(r):
    """Default coupling density (15/16)(1-r^2)^2 on [-1, 1]: symmetric, C^1,
    unit mass, positive at the origin."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) <= 1.0
    return np.where(inside, (15.0 / 16.0) * (1.0 - r * r) ** 2, 0.0)


def _validate_density(density):
    for r in (0.1, 0.37, 0.5, 0.93):
        if abs(float(density(r)) - float(density(-r))) > 1e-12:
            raise SpecError("density must be symmetric")
    for r in (1.0001, 1.5, 2.0, 10.0):
        if abs(float(density(r))) > 0.0 or abs(float(density(-r))) > 0.0:
            raise SpecError("density must be supported in [-1, 1]")
    if float(density(0.0)) <= 0.0:
        raise SpecError("density must be positive at the origin")
    h = 1e-5
    if abs(float(density(1.0))) > 1e-12 or abs(float(density(1.0 - h))) / h > 1e-2:
        raise SpecError("density must vanish C^1-smoothly at the support edge")
    mass, _ = quad(lambda r: float(density(r)), -1.0, 1.0, limit=200)
    if abs(mass - 1.0) > 1e-6:
        raise SpecError(f"density mass {mass} != 1")


@dataclass(frozen=True)
class KacKernel:
    """Horizontal coupling weights at scale gamma.

    ``int_weights[k]`` is the integer numerator for offset +-k
    (index 0 is 0); ``int_total`` their total over all nonzero offsets, so
    the weights sum to exactly 1 as rationals.
    """

    gamma: float
    reach: int                       # support: 0 < |offset| <= reach
    int_weights: np.ndarray          # int64, shape (reach + 1,)
    int_total: int
    c_gamma: float
    density_name: str = "quartic"

    @property
    def weights(self):
        return self.int_weights / self.int_total

    def full_int_row(self):
        """Symmetric integer kernel row of length 2*reach + 1, center 0."""
        a = self.int_weights
        return np.concatenate([a[:0:-1], a]).astype(np.int64)

    def full_float_row(self):
        return self.full_int_row() / self.int_total

    def weight(self, offset):
        k = abs(int(offset))
        if k == 0 or k > self.reach:
            return 0.0
        return float(self.int_weights[k]) / self.int_total


def build_kernel(gamma, density: Optional[Callable] = None, density_name=None):
    """Kernel weights c_gamma * gamma * J(gamma * (x - y)), normalized so the
    lattice sum over nonzero offsets is exactly 1.

    gamma must be a power of 1/2.  For the default quartic density the
    integer numerators are exact; a custom density is quantized to 2^-40
    relative before normalizing (and validated against the model
    hypotheses first).
    """
    n = math.log2(1.0 / gamma)
    if abs(n - round(n)) > 1e-12 or n < 1:
        raise DomainError(f"gamma={gamma} must be 2^-n for integer n >= 1")
    m = int(round(1.0 / gamma))
    if density is None:
        a = np.zeros(m + 1, dtype=np.int64)
        ks = np.arange(1, m + 1, dtype=np.int64)
        a[1:] = (m * m - ks * ks) ** 2
        name = "quartic"
        raw = lambda k: (15.0 / 16.0) * (1.0 - (k / m) ** 2) ** 2  # noqa: E731
    else:
        _validate_density(density)
        a = np.zeros(m + 1, dtype=np.int64)
        for k in range(1, m + 1):
            a[k] = int(round(float(density(k / m)) * _INT_SCALE))
        name = density_name or getattr(density, "__name__", "custom")
        raw = lambda k: float(density(k / m))  # noqa: E731
    total = int(a.sum()) * 2
    if total <= 0:
        raise SpecError("kernel has no support on the lattice at this gamma")
    raw_sum = 2.0 * sum(raw(k) for k in range(1, m + 1))
    c_gamma = 1.0 / (gamma * raw_sum)
    return KacKernel(
        gamma=gamma,
        reach=m,
        int_weights=a,
        int_total=total,
        c_gamma=c_gamma,
        density_name=name,
    )


# ---------------------------------------------------------------------------
# scales
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleParams:
    """Coarse-graining scales derived from (gamma, alpha) plus the accuracy
    parameter.  All lengths are powers of two (enforced).  ``zeta`` may be
    given explicitly; otherwise it is gamma^a.
    """

    gamma: float
    alpha: float
    a: Optional[float] = None
    zeta_value: Optional[float] = None

    def __post_init__(self):
        n = math.log2(1.0 / self.gamma)
        if abs(n - round(n)) > 1e-12 or n < 1:
            raise DomainError("gamma must be 2^-n")
        n = round(n)
        if not 0 < self.alpha < 1 or abs(n * self.alpha - round(n * self.alpha)) > 1e-9:
            raise DomainError(
                "alpha must lie in (0, 1) and make gamma^-alpha a power of two "
                "at this gamma"
            )
        if self.a is not None and not 0 < self.a < self.alpha:
            raise DomainError("need 0 < a < alpha")
        if self.a is None and self.zeta_value is None:
            raise DomainError("give either a or an explicit zeta")
        if self.zeta_value is not None and not 0 < self.zeta_value < 1:
            raise DomainError("zeta must be in (0, 1)")

    @property
    def n(self):
        return int(round(math.log2(1.0 / self.gamma)))

    @property
    def kernel_reach(self):
        return int(round(1.0 / self.gamma))

    @property
    def ell_plus(self):
        return int(round(self.gamma ** -(1.0 + self.alpha)))

    @property
    def ell_minus(self):
        return int(round(self.gamma ** -(1.0 - self.alpha)))

    @property
    def block_rows(self):
        return int(round(self.gamma ** -self.alpha))

    @property
    def zeta(self):
        if self.zeta_value is not None:
            return self.zeta_value
        return self.gamma ** self.a

    @property
    def micro_block(self):
        """The fine coarse-graining scale gamma^-1/2 (needs even n)."""
        if self.n % 2:
            raise DomainError("gamma^-1/2 is a lattice scale only for even n")
        return 1 << (self.n // 2)


def chi(x, i, ell_plus):
    """1 where (x, i) interacts vertically with (x, i+1)."""
    return (x // ell_plus + i) % 2 == 0


def vertical_partner(x, i, ell_plus):
    return (x, i + 1) if chi(x, i, ell_plus) else (x, i - 1)


# ---------------------------------------------------------------------------
# spin configurations
# ---------------------------------------------------------------------------

@dataclass
class SpinConfig:
    """Spins on a finite site set with a boundary rule.

    Stored on the bounding grid (rows x cols) with a membership mask; for
    rectangle-union boxes the mask encodes the one-row stagger of odd
    column-blocks.  ``boundary`` is "plus", "minus" or "free" (no collar).
    """

    ell_plus: int
    spins: np.ndarray        # int8, shape (rows, cols)
    mask: np.ndarray         # bool, same shape
    boundary: str = "plus"
    block_rows: int = 0      # 0 when the box is not a rectangle union
    rect_cols: int = 0
    rect_rows: int = 0

    def __post_init__(self):
        if self.boundary not in ("plus", "minus", "free"):
            raise DomainError("boundary must be plus, minus or free")
        if self.spins.shape != self.mask.shape:
            raise GeometryError("spins and mask shapes differ")

    @classmethod
    def rect_union(cls, rect_cols, rect_rows, ell_plus, block_rows,
                   fill=1, boundary="plus"):
        """Box made of rect_cols x rect_rows whole rectangles anchored at the
        origin; odd column-blocks sit one row higher."""
        if block_rows % 2:
            raise GeometryError("block_rows must be even")
        rows = rect_rows * block_rows + 1
        cols = rect_cols * ell_plus
        mask = np.zeros((rows, cols), dtype=bool)
        for k in range(rect_cols):
            x0, x1 = k * ell_plus, (k + 1) * ell_plus
            if k % 2 == 0:
                mask[: rows - 1, x0:x1] = True
            else:
                mask[1:, x0:x1] = True
        spins = np.where(mask, np.int8(fill), np.int8(0))
        return cls(
            ell_plus=ell_plus,
            spins=spins,
            mask=mask,
            boundary=boundary,
            block_rows=block_rows,
            rect_cols=rect_cols,
            rect_rows=rect_rows,
        )

    @classmethod
    def from_sites(cls, sites, values, ell_plus, boundary="free"):
        """Arbitrary site set (x, i) with given spins; not necessarily a
        rectangle union (vertical bonds then exist only inside the set)."""
        xs = np.array([s[0] for s in sites])
        ys = np.array([s[1] for s in sites])
        if np.any(xs < 0) or np.any(ys < 0):
            raise GeometryError("sites must have nonnegative coordinates")
        rows = int(ys.max()) + 1
        cols = int(xs.max()) + 1
        mask = np.zeros((rows, cols), dtype=bool)
        spins = np.zeros((rows, cols), dtype=np.int8)
        mask[ys, xs] = True
        spins[ys, xs] = np.asarray(values, dtype=np.int8)
        return cls(ell_plus=ell_plus, spins=spins, mask=mask, boundary=boundary)

    @property
    def n_sites(self):
        return int(self.mask.sum())

    def member_indices(self):
        ys, xs = np.nonzero(self.mask)
        return xs, ys

    def flipped(self):
        out = SpinConfig(
            ell_plus=self.ell_plus,
            spins=np.where(self.mask, -self.spins, self.spins),
            mask=self.mask.copy(),
            boundary={"plus": "minus", "minus": "plus", "free": "free"}[self.boundary],
            block_rows=self.block_rows,
            rect_cols=self.rect_cols,
            rect_rows=self.rect_rows,
        )
        return out

    # -- serialization: bit-packed spins + JSON header ----------------------

    def to_bytes(self):
        header = {
            "width": int(self.spins.shape[1]),
            "height": int(self.spins.shape[0]),
            "ell_plus": self.ell_plus,
            "block_rows": self.block_rows,
            "rect_cols": self.rect_cols,
            "rect_rows": self.rect_rows,
            "boundary": self.boundary,
        }
        bits = np.packbits((self.spins.ravel() > 0).astype(np.uint8))
        maskbits = np.packbits(self.mask.ravel().astype(np.uint8))
        blob = json.dumps(header).encode() + b"\n" + base64.b64encode(
            bits.tobytes()
        ) + b"\n" + base64.b64encode(maskbits.tobytes())
        return blob

    @classmethod
    def from_bytes(cls, blob):
        head, bits64, mask64 = blob.split(b"\n")
        header = json.loads(head.decode())
        shape = (header["height"], header["width"])
        total = shape[0] * shape[1]
        bits = np.unpackbits(
            np.frombuffer(base64.b64decode(bits64), dtype=np.uint8)
        )[:total].reshape(shape)
        mask = np.unpackbits(
            np.frombuffer(base64.b64decode(mask64), dtype=np.uint8)
        )[:total].reshape(shape).astype(bool)
        spins = np.where(mask, np.where(bits > 0, 1, -1), 0).astype(np.int8)
        return cls(
            ell_plus=header["ell_plus"],
            spins=spins,
            mask=mask,
            boundary=header["boundary"],
            block_rows=header["block_rows"],
            rect_cols=header["rect_cols"],
            rect_rows=header["rect_rows"],
        )


def boundary_spin_grid(config: SpinConfig, reach):
    """Spins seen by the kernel: member spins plus the boundary collar.

    Returns an int64 array padded by ``reach`` columns on each side; the
    collar and any non-member cell of the bounding grid carry the boundary
    value (0 for a free boundary)."""
    rows, cols = config.spins.shape
    bval = {"plus": 1, "minus": -1, "free": 0}[config.boundary]
    grid = np.full((rows, cols + 2 * reach), bval, dtype=np.int64)
    inner = grid[:, reach : reach + cols]
    inner[:] = np.where(config.mask, config.spins, np.int8(bval))
    return grid


def vertical_pairs(config: SpinConfig):
    """Arrays (x, i_low) of member sites whose chi-bond partner (x, i_low+1)
    is also a member; each vertical bond listed once."""
    rows, cols = config.mask.shape
    xs_all = np.arange(cols)
    ks = xs_all // config.ell_plus
    pairs_x = [np.empty(0, dtype=np.int64)]
    pairs_y = [np.empty(0, dtype=np.int64)]
    for i in range(rows - 1):
        active = ((ks + i) % 2 == 0) & config.mask[i] & config.mask[i + 1]
        xs = xs_all[active]
        pairs_x.append(xs)
        pairs_y.append(np.full(xs.shape, i))
    return np.concatenate(pairs_x), np.concatenate(pairs_y)


def energy_terms(config: SpinConfig, kernel: KacKernel):
    """Integer pieces of the chessboard energy.

    Returns (pair_sum, boundary_sum, vertical_sum): the within-box kernel
    pair sum counted once per unordered pair times 2 (i.e. the ordered
    sum), the box-to-collar sum, and the chi-bond spin product sum.  The
    float energy is -pair_sum/(2 S) - boundary_sum/S - eps * vertical_sum.
    """
    reach = kernel.reach
    row_kernel = kernel.full_int_row()
    member = np.where(config.mask, config.spins, np.int8(0)).astype(np.int64)
    full = boundary_spin_grid(config, reach)
    outside = full.copy()
    outside[:, reach : reach + config.spins.shape[1]][config.mask] = 0

    pair_sum = 0
    boundary_sum = 0
    for i in range(config.spins.shape[0]):
        if not config.mask[i].any():
            continue
        conv_in = np.convolve(member[i], row_kernel, mode="full")[
            reach : reach + config.spins.shape[1]
        ]
        conv_out = np.convolve(outside[i], row_kernel, mode="full")[
            2 * reach : 2 * reach + config.spins.shape[1]
        ]
        pair_sum += int(np.dot(member[i], conv_in))
        boundary_sum += int(np.dot(member[i], conv_out))

    px, py = vertical_pairs(config)
    vertical_sum = int(
        np.sum(
            config.spins[py, px].astype(np.int64)
            * config.spins[py + 1, px].astype(np.int64)
        )
    )
    return pair_sum, boundary_sum, vertical_sum


def chessboard_energy(config: SpinConfig, kernel: KacKernel, eps):
    """Energy of the configuration under the chessboard Hamiltonian with its
    boundary condition; exact rational assembly, one float division."""
    pair_sum, boundary_sum, vertical_sum = energy_terms(config, kernel)
    s = kernel.int_total
    return -pair_sum / (2.0 * s) - boundary_sum / s - eps * vertical_sum


# ---------------------------------------------------------------------------
# block averages and labels
# ---------------------------------------------------------------------------

def block_average(config: SpinConfig, ell):
    """Per-row averages over the length-ell intervals; masked rows give nan.

    Values land on the grid {-1, -1 + 2/ell, ..., 1}.  Intervals are always
    entirely inside or outside the box because ell divides ell_plus.
    """
    rows, cols = config.spins.shape
    if cols % ell:
        raise GeometryError("box width must be a multiple of the block size")
    nb = cols // ell
    spins = np.where(config.mask, config.spins, np.int8(0)).astype(float)
    sums = spins.reshape(rows, nb, ell).sum(axis=2)
    counts = config.mask.reshape(rows, nb, ell).sum(axis=2)
    with np.errstate(invalid="ignore"):
        avg = np.where(counts == ell, sums / ell, np.nan)
    if np.any((counts != 0) & (counts != ell)):
        raise GeometryError("a block straddles the box boundary")
    return avg


@dataclass
class BlockLabels:
    """Phase labels: eta per (row, ell_minus block), theta per rectangle,
    big_theta per rectangle with its 3x3 neighborhood."""

    eta: Optional[np.ndarray]        # int8 (rows, n_blocks); 9 marks non-member
    theta: np.ndarray                # int8 (rect_cols, rect_rows)
    big_theta: np.ndarray            # int8 (rect_cols, rect_rows)
    ell_minus: int = 0
    boundary_label: int = 1

    NON_MEMBER = np.int8(9)

    def flipped(self):
        eta = None if self.eta is None else np.where(
            self.eta == self.NON_MEMBER, self.eta, -self.eta
        )
        return BlockLabels(
            eta=eta,
            theta=-self.theta,
            big_theta=-self.big_theta,
            ell_minus=self.ell_minus,
            boundary_label=-self.boundary_label,
        )


def eta_from_averages(avg, m_eps, zeta):
    """eta labels from block averages: +-1 within zeta of +-m_eps, else 0."""
    if not zeta < m_eps:
        raise DomainError("labels need zeta < m_eps")
    eta = np.zeros(avg.shape, dtype=np.int8)
    eta[np.abs(avg - m_eps) <= zeta] = 1
    eta[np.abs(avg + m_eps) <= zeta] = -1
    eta[np.isnan(avg)] = BlockLabels.NON_MEMBER
    return eta


def theta_from_eta(eta, config: SpinConfig, ell_minus):
    """Per-rectangle unanimity of eta (0 when mixed)."""
    if not (config.rect_cols and config.rect_rows):
        raise GeometryError("theta labels need a rectangle-union box")
    nx, ny = config.rect_cols, config.rect_rows
    bb = config.block_rows
    per_rect = config.ell_plus // ell_minus
    theta = np.zeros((nx, ny), dtype=np.int8)
    for k in range(nx):
        row_lo = 0 if k % 2 == 0 else 1
        for j in range(ny):
            rows = slice(j * bb + row_lo, (j + 1) * bb + row_lo)
            blocks = slice(k * per_rect, (k + 1) * per_rect)
            cell = eta[rows, blocks]
            if np.all(cell == 1):
                theta[k, j] = 1
            elif np.all(cell == -1):
                theta[k, j] = -1
    return theta


def big_theta_from_theta(theta, boundary_label=1):
    """3x3-neighborhood unanimity; rectangles outside the box count as the
    boundary phase."""
    nx, ny = theta.shape
    padded = np.full((nx + 2, ny + 2), np.int8(boundary_label))
    padded[1:-1, 1:-1] = theta
    big = np.zeros_like(theta)
    for s in (1, -1):
        hit = np.ones((nx, ny), dtype=bool)
        for du in range(3):
            for dv in range(3):
                hit &= padded[du : du + nx, dv : dv + ny] == s
        big[hit] = s
    return big


def compute_labels(config: SpinConfig, params: ScaleParams, m_eps,
                   boundary_label=None):
    """eta/theta/big-theta labels of a spin configuration.

    The boundary label (default: +1 for a plus boundary, -1 for minus)
    stands in for the phase of the rectangles just outside the box when
    forming the 3x3 neighborhoods.
    """
    if boundary_label is None:
        boundary_label = {"plus": 1, "minus": -1}.get(config.boundary)
        if boundary_label is None:
            raise BoundaryError("free boundary needs an explicit boundary_label")
    if config.ell_plus != params.ell_plus or config.block_rows != params.block_rows:
        raise GeometryError("config rectangles do not match the scale parameters")
    avg = block_average(config, params.ell_minus)
    eta = eta_from_averages(avg, m_eps, params.zeta)
    theta = theta_from_eta(eta, config, params.ell_minus)
    big = big_theta_from_theta(theta, boundary_label)
    return BlockLabels(
        eta=eta,
        theta=theta,
        big_theta=big,
        ell_minus=params.ell_minus,
        boundary_label=boundary_label,
    )


def labels_from_theta(theta, boundary_label=1):
    """Labels built from a synthetic per-rectangle eta field (theta == eta
    uniform on each rectangle)."""
    theta = np.asarray(theta, dtype=np.int8)
    return BlockLabels(
        eta=None,
        theta=theta,
        big_theta=big_theta_from_theta(theta, boundary_label),
        boundary_label=boundary_label,
    )


# ---------------------------------------------------------------------------
# contours
# ---------------------------------------------------------------------------

@dataclass
class Interior:
    cells: frozenset
    sign: int
    boundary_outside: frozenset   # rectangles of the interior touching sp
    boundary_inside: frozenset    # rectangles of sp touching the interior


@dataclass
class Contour:
    sp: frozenset                 # rectangle indices (k, j)
    sign: int                     # big-theta value on the exterior side
    exterior: frozenset
    boundary_out: frozenset       # exterior rectangles touching sp
    boundary_in: frozenset        # sp rectangles touching the exterior
    interiors: list
    eta_spec: dict                # (k, j) -> theta/eta value on sp

    @property
    def c_region(self):
        cells = set(self.sp)
        for it in self.interiors:
            cells |= it.cells
        return frozenset(cells)

    @property
    def size(self):
        return len(self.sp)

    def translated(self, dk, dj=0):
        shift = lambda cells: frozenset((k + dk, j + dj) for k, j in cells)  # noqa: E731
        return Contour(
            sp=shift(self.sp),
            sign=self.sign,
            exterior=shift(self.exterior),
            boundary_out=shift(self.boundary_out),
            boundary_in=shift(self.boundary_in),
            interiors=[
                Interior(
                    cells=shift(it.cells),
                    sign=it.sign,
                    boundary_outside=shift(it.boundary_outside),
                    boundary_inside=shift(it.boundary_inside),
                )
                for it in self.interiors
            ],
            eta_spec={(k + dk, j + dj): v for (k, j), v in self.eta_spec.items()},
        )

    def to_dict(self):
        return {
            "sp_rectangles": sorted(self.sp),
            "sign": self.sign,
            "interiors": [
                {"rectangles": sorted(it.cells), "sign": it.sign}
                for it in self.interiors
            ],
            "sizes": {
                "sp": len(self.sp),
                "interiors": [len(it.cells) for it in self.interiors],
            },
        }


_STAR = [(du, dv) for du in (-1, 0, 1) for dv in (-1, 0, 1) if (du, dv) != (0, 0)]


def _star_components(cells_mask):
    """Union-find *-connected labeling of True cells; deterministic roots
    (smallest linear index).  Returns a dict root -> set of cells."""
    nx, ny = cells_mask.shape
    parent = {}

    def find(c):
        root = c
        while parent[root] != root:
            root = parent[root]
        while parent[c] != root:
            parent[c], c = root, parent[c]
        return root

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra == rb:
            return
        # keep the smaller (k, j) as root for reproducibility
        if ra <= rb:
            parent[rb] = ra
        else:
            parent[ra] = rb

    for k in range(nx):
        for j in range(ny):
            if not cells_mask[k, j]:
                continue
            parent.setdefault((k, j), (k, j))
            for du, dv in _STAR:
                u, v = k + du, j + dv
                if 0 <= u < nx and 0 <= v < ny and cells_mask[u, v]:
                    if (u, v) in parent:
                        union((k, j), (u, v))
    comps = {}
    for c in parent:
        comps.setdefault(find(c), set()).add(c)
    return comps


def _adjacent(cells, other):
    """Cells of `cells` that *-touch `other`."""
    out = set()
    for (k, j) in cells:
        for du, dv in _STAR:
            if (k + du, j + dv) in other:
                out.add((k, j))
                break
    return out


def extract_contours(labels: BlockLabels):
    """Contours of a labeled box: maximal *-connected components of the
    undetermined (big_theta == 0) region with their full geometry.

    The rectangles on the box edge must be uniformly determined with the
    boundary phase (BoundaryError otherwise); the exterior of each contour
    is realized as the complement component reaching the box edge.
    """
    big = labels.big_theta
    nx, ny = big.shape
    if nx < 3 or ny < 3:
        raise GeometryError("contour extraction needs a box of >= 3x3 rectangles")
    edge = [(k, j) for k in range(nx) for j in range(ny)
            if k in (0, nx - 1) or j in (0, ny - 1)]
    collar_vals = {int(big[k, j]) for k, j in edge}
    if collar_vals != {labels.boundary_label}:
        raise BoundaryError(
            f"inner boundary collar not uniformly {labels.boundary_label}: "
            f"saw values {sorted(collar_vals)}"
        )

    undet = big == 0
    comps = _star_components(undet)
    contours = []
    for root in sorted(comps):
        sp = comps[root]
        sp_set = frozenset(sp)
        # complement components of this contour's support alone
        comp_mask = np.ones((nx, ny), dtype=bool)
        for (k, j) in sp:
            comp_mask[k, j] = False
        cc = _star_components(comp_mask)
        ext_cells = set()
        int_comps = []
        for croot in sorted(cc):
            cells = cc[croot]
            if any(k in (0, nx - 1) or j in (0, ny - 1) for k, j in cells):
                ext_cells |= cells
            else:
                int_comps.append(cells)
        ext = frozenset(ext_cells)
        b_out = frozenset(_adjacent(ext, sp_set))
        b_in = frozenset(_adjacent(sp_set, ext))
        out_vals = {int(big[k, j]) for k, j in b_out}
        if len(out_vals) != 1 or 0 in out_vals:
            raise BoundaryError(f"exterior side of a contour not constant: {out_vals}")
        sign = out_vals.pop()
        interiors = []
        for cells in sorted(int_comps, key=min):
            b_out_k = frozenset(_adjacent(cells, sp_set))
            b_in_k = frozenset(_adjacent(sp_set, cells))
            vals = {int(big[k, j]) for k, j in b_out_k}
            if len(vals) != 1 or 0 in vals:
                raise BoundaryError(
                    f"interior boundary ring not uniformly determined: {vals}"
                )
            interiors.append(
                Interior(
                    cells=frozenset(cells),
                    sign=vals.pop(),
                    boundary_outside=b_out_k,
                    boundary_inside=b_in_k,
                )
            )
        eta_spec = {cell: int(labels.theta[cell]) for cell in sorted(sp)}
        contours.append(
            Contour(
                sp=sp_set,
                sign=sign,
                exterior=ext,
                boundary_out=b_out,
                boundary_in=b_in,
                interiors=interiors,
                eta_spec=eta_spec,
            )
        )
    return contours


# ---------------------------------------------------------------------------
# contour counting series
# ---------------------------------------------------------------------------

MAX_ANIMAL_SIZE = 12


def count_star_animals(max_size):
    """Number of *-connected fixed cell sets of each size (translation
    classes), counted once each by candidate-exclusion growth from a
    normalized first cell.  counts[s] is the number of size-s animals."""
    if max_size > MAX_ANIMAL_SIZE:
        raise SizeError(f"max_size {max_size} beyond enumeration budget "
                        f"{MAX_ANIMAL_SIZE}")
    counts = [0] * (max_size + 1)

    def allowed(c):
        x, y = c
        return y > 0 or (y == 0 and x >= 0)

    def grow(candidates, size, seen):
        while candidates:
            cell = candidates.pop()
            counts[size + 1] += 1
            if size + 1 < max_size:
                fresh = []
                for du, dv in _STAR:
                    nb = (cell[0] + du, cell[1] + dv)
                    if allowed(nb) and nb not in seen:
                        seen.add(nb)
                        fresh.append(nb)
                grow(candidates + fresh, size + 1, seen)
                seen.difference_update(fresh)
            # cell stays in `seen`: excluded from every later branch here

    seen = {(0, 0)}
    grow([(0, 0)], 0, seen)
    return counts


def peierls_series(k_factor, max_size):
    """Truncated contour-counting series sum over *-connected cell sets D
    containing the origin of |D| e^(-K |D|).

    A size-s translation class contains the origin in s of its translates,
    so the per-size count of origin-containing sets is s * animals(s).
    Returns (value, per_size_counts dict).
    """
    counts = count_star_animals(max_size)
    per_size = {s: s * counts[s] for s in range(1, max_size + 1)}
    value = sum(n_sets * s * math.exp(-k_factor * s)
                for s, n_sets in per_size.items())
    return value, per_size

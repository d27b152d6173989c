"""Lattice regions, magnetization profiles and boundary data for the
free-energy functionals.

A Region is an explicit finite site set with a total vertical-partner map
(its construction guarantees no vertical bond leaves the region).  Two
kinds are supported: unions of the ell_plus x block_rows rectangles (the
chessboard pairing), and two-layer intervals where every column is a
vertically interacting pair (the mean-constrained problems).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeometryError
from .lattice import chi

_ROW_DTYPE = np.int64


@dataclass
class Region:
    xs: np.ndarray                  # site x coordinates
    rows: np.ndarray                # site row (layer) indices
    partner: np.ndarray             # index of the vertical partner site
    ell_plus: int
    kind: str = "rectangles"        # "rectangles" | "interval"
    rects: tuple = ()               # rectangle indices for rectangle unions
    block_rows: int = 0

    def __post_init__(self):
        if len(self.xs) != len(self.rows) or len(self.xs) != len(self.partner):
            raise GeometryError("inconsistent site arrays")
        if np.any(self.partner < 0):
            raise GeometryError("vertical partner leaves the region")
        back = self.partner[self.partner]
        if not np.array_equal(back, np.arange(len(self.xs))):
            raise GeometryError("vertical partner map is not an involution")

    @property
    def n_sites(self):
        return len(self.xs)

    def site_index(self):
        """dict (x, row) -> position in the site arrays."""
        return {(int(x), int(r)): t for t, (x, r) in enumerate(zip(self.xs, self.rows))}

    def row_layout(self):
        """dict row -> (sorted x array, matching site indices)."""
        layout = {}
        for r in np.unique(self.rows):
            sel = np.nonzero(self.rows == r)[0]
            order = np.argsort(self.xs[sel], kind="stable")
            layout[int(r)] = (self.xs[sel][order], sel[order])
        return layout

    def pair_indices(self):
        """(low, high) site indices of each vertical bond, listed once."""
        idx = np.arange(self.n_sites)
        lower = idx[self.rows[self.partner] > self.rows]
        return lower, self.partner[lower]

    @classmethod
    def from_rectangles(cls, rects, ell_plus, block_rows):
        """Union of rectangles (k, j); odd k shifted up one row."""
        if block_rows % 2:
            raise GeometryError("block_rows must be even")
        rects = sorted(set((int(k), int(j)) for k, j in rects))
        xs, rows = [], []
        for k, j in rects:
            lo = j * block_rows + (1 if k % 2 else 0)
            for i in range(lo, lo + block_rows):
                for x in range(k * ell_plus, (k + 1) * ell_plus):
                    xs.append(x)
                    rows.append(i)
        xs = np.array(xs, dtype=_ROW_DTYPE)
        rows = np.array(rows, dtype=_ROW_DTYPE)
        index = {(int(x), int(r)): t for t, (x, r) in enumerate(zip(xs, rows))}
        partner = np.empty(len(xs), dtype=_ROW_DTYPE)
        for t, (x, r) in enumerate(zip(xs, rows)):
            pr = r + 1 if chi(int(x), int(r), ell_plus) else r - 1
            p = index.get((int(x), int(pr)), -1)
            partner[t] = p
        return cls(
            xs=xs,
            rows=rows,
            partner=partner,
            ell_plus=ell_plus,
            kind="rectangles",
            rects=tuple(rects),
            block_rows=block_rows,
        )

    @classmethod
    def two_layer_interval(cls, x0, length, layers=(0, 1), ell_plus=0):
        """Interval [x0, x0+length) on two layers, every column a pair."""
        lo, hi = layers
        xs = np.concatenate([np.arange(x0, x0 + length)] * 2).astype(_ROW_DTYPE)
        rows = np.concatenate(
            [np.full(length, lo), np.full(length, hi)]
        ).astype(_ROW_DTYPE)
        partner = np.concatenate(
            [np.arange(length) + length, np.arange(length)]
        ).astype(_ROW_DTYPE)
        return cls(
            xs=xs,
            rows=rows,
            partner=partner,
            ell_plus=ell_plus,
            kind="interval",
        )

    def to_dict(self):
        if self.kind == "rectangles":
            return {
                "type": "rectangles",
                "ell_plus": self.ell_plus,
                "block_rows": self.block_rows,
                "rectangles": [list(r) for r in self.rects],
            }
        return {
            "type": "interval",
            "x0": int(self.xs.min()),
            "length": int(len(self.xs) // 2),
            "layers": [int(self.rows.min()), int(self.rows.max())],
        }

    @classmethod
    def from_dict(cls, d):
        if d["type"] == "rectangles":
            return cls.from_rectangles(
                [tuple(r) for r in d["rectangles"]], d["ell_plus"], d["block_rows"]
            )
        return cls.two_layer_interval(d["x0"], d["length"], tuple(d["layers"]))


@dataclass
class Profile:
    """Magnetization values on a region's sites (same order)."""

    region: Region
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.region.n_sites,):
            raise GeometryError("profile length does not match the region")
        if np.any(np.abs(self.values) > 1.0):
            raise DomainError("profile values must lie in [-1, 1]")

    @classmethod
    def constant(cls, region, value):
        return cls(region, np.full(region.n_sites, float(value)))

    def copy(self):
        return Profile(self.region, self.values.copy())

    def flipped(self):
        return Profile(self.region, -self.values)

    def partner_values(self):
        return self.values[self.region.partner]

    def block_averages(self, ell):
        """dict (row, block) -> average over the ell-interval of that row.
        Blocks must be fully contained in the region."""
        out = {}
        for r, (xs, idx) in self.region.row_layout().items():
            blocks = xs // ell
            for b in np.unique(blocks):
                sel = idx[blocks == b]
                if len(sel) != ell:
                    raise GeometryError("a block straddles the region boundary")
                out[(r, int(b))] = float(self.values[sel].mean())
        return out

    def eta_labels(self, ell, m_eps, zeta):
        """dict (row, block) -> phase label in {-1, 0, +1}."""
        if not zeta < m_eps:
            raise DomainError("labels need zeta < m_eps")
        labels = {}
        for key, avg in self.block_averages(ell).items():
            if abs(avg - m_eps) <= zeta:
                labels[key] = 1
            elif abs(avg + m_eps) <= zeta:
                labels[key] = -1
            else:
                labels[key] = 0
        return labels

    def to_dict(self):
        return {"region": self.region.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Region.from_dict(d["region"]), np.array(d["values"]))


class BoundaryField:
    """Per-site magnetization data outside a region (the conditioning field).

    Holds explicit sites only; functional terms against a boundary sum over
    exactly the sites present, which is how restricted boundary domains are
    expressed.
    """

    def __init__(self):
        self._rows = {}

    @classmethod
    def from_arrays(cls, rows_xs_vals):
        bf = cls()
        for row, xs, vals in rows_xs_vals:
            bf.add_row(row, xs, vals)
        return bf

    def add_row(self, row, xs, vals):
        xs = np.asarray(xs, dtype=_ROW_DTYPE)
        vals = np.asarray(vals, dtype=float)
        if np.any(np.abs(vals) > 1.0):
            raise DomainError("boundary values must lie in [-1, 1]")
        if int(row) in self._rows:
            old_xs, old_vals = self._rows[int(row)]
            xs = np.concatenate([old_xs, xs])
            vals = np.concatenate([old_vals, vals])
        order = np.argsort(xs, kind="stable")
        self._rows[int(row)] = (xs[order], vals[order])

    def rows(self):
        return self._rows.keys()

    def row_data(self, row):
        return self._rows.get(int(row), (np.empty(0, dtype=_ROW_DTYPE), np.empty(0)))

    def dense_row(self, row, lo, hi):
        """Values on [lo, hi) with zeros where no data is present."""
        out = np.zeros(hi - lo)
        xs, vals = self.row_data(row)
        sel = (xs >= lo) & (xs < hi)
        out[xs[sel] - lo] = vals[sel]
        return out

    def flipped(self):
        bf = BoundaryField()
        for row, (xs, vals) in self._rows.items():
            bf.add_row(row, xs.copy(), -vals)
        return bf

    def restrict_to(self, allowed_sites):
        """Keep only sites in the given (x, row) set."""
        bf = BoundaryField()
        for row, (xs, vals) in self._rows.items():
            keep = np.array([(int(x), row) in allowed_sites for x in xs], dtype=bool)
            if keep.any():
                bf.add_row(row, xs[keep], vals[keep])
        return bf

    def to_dict(self):
        return {
            str(row): {"x": xs.tolist(), "m": vals.tolist()}
            for row, (xs, vals) in sorted(self._rows.items())
        }

    @classmethod
    def from_dict(cls, d):
        bf = cls()
        for row, data in d.items():
            bf.add_row(int(row), np.array(data["x"]), np.array(data["m"]))
        return bf


def collar_boundary(region: Region, reach, value=None, fn=None):
    """Boundary field on the horizontal collar of each region row: the
    ``reach`` columns on both sides of every maximal run of region sites.
    ``value`` gives a constant field; ``fn(x, row) -> m`` a general one.
    """
    if (value is None) == (fn is None):
        raise DomainError("give exactly one of value, fn")
    bf = BoundaryField()
    for row, (xs, _) in region.row_layout().items():
        runs = []
        start = xs[0]
        prev = xs[0]
        for x in xs[1:]:
            if x != prev + 1:
                runs.append((start, prev))
                start = x
            prev = x
        runs.append((start, prev))
        collar = []
        for lo, hi in runs:
            collar.extend(range(lo - reach, lo))
            collar.extend(range(hi + 1, hi + 1 + reach))
        collar = np.array(sorted(set(collar) - set(xs.tolist())), dtype=_ROW_DTYPE)
        if value is not None:
            vals = np.full(len(collar), float(value))
        else:
            vals = np.array([fn(int(x), row) for x in collar])
        bf.add_row(row, collar, vals)
    return bf


def region_sites_set(region: Region):
    return {(int(x), int(r)) for x, r in zip(region.xs, region.rows)}

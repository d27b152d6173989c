"""Seeded Monte Carlo for the chessboard Hamiltonian, plus an exact
enumerator for tiny systems.

The sampler keeps per-site horizontal fields as integer kernel numerators
(one int64 slice update per flip), so a from-scratch recomputation agrees
bit-for-bit at any time: that equality is asserted periodically and is the
correctness anchor for the incremental bookkeeping.  Randomness comes from
a counter-based generator (Philox) keyed by the chain seed; identical
configs and seeds reproduce observable streams exactly, and a plus/minus
mirrored pair of runs produces exactly opposite trajectories.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lattice
from .errors import DomainError, SizeError
from .lattice import KacKernel, ScaleParams, SpinConfig

PRESETS = {
    "coarse": ScaleParams(gamma=2.0**-6, alpha=1.0 / 3.0, a=1.0 / 12.0),
    "fine": ScaleParams(gamma=2.0**-8, alpha=1.0 / 4.0, a=1.0 / 20.0),
}

ENUM_MAX_SITES = 24


@dataclass
class ChainConfig:
    rect_cols: int
    rect_rows: int
    params: ScaleParams
    eps: float
    boundary: str = "plus"
    seed: int = 0
    sweeps: int = 1000
    burn_in: int = 200
    sample_every: int = 1
    dynamics: str = "glauber"
    m_eps: Optional[float] = None      # needed for label observables
    track_labels: bool = False
    audit_every: int = 100_000

    def __post_init__(self):
        if self.sweeps <= self.burn_in:
            raise DomainError("sweeps must exceed burn_in")
        if self.dynamics not in ("glauber", "metropolis"):
            raise DomainError("dynamics must be glauber or metropolis")


@dataclass
class Observables:
    mean_center_spin: float
    se_center_spin: float
    mean_center_patch: float          # center block averaged over all rows
    se_center_patch: float
    mean_box_spin: float
    mean_block_mag: float
    autocorr_time: float
    n_samples: int
    label_histogram: Optional[dict]
    contour_census: Optional[dict]
    stream: list                      # (sweep, center_spin, block_mag, n_contours, max_contour)
    patch_series: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mean_center_spin": self.mean_center_spin,
            "se_center_spin": self.se_center_spin,
            "mean_center_patch": self.mean_center_patch,
            "se_center_patch": self.se_center_patch,
            "mean_box_spin": self.mean_box_spin,
            "mean_block_mag": self.mean_block_mag,
            "autocorr_time": self.autocorr_time,
            "n_samples": self.n_samples,
            "label_histogram": self.label_histogram,
            "contour_census": self.contour_census,
        }


class Sampler:
    """Single-spin-flip dynamics on one owned configuration."""

    def __init__(self, config: SpinConfig, kernel: KacKernel, eps, seed,
                 dynamics="glauber"):
        self.kernel = kernel
        self.eps = float(eps)
        self.dynamics = dynamics
        self.seed = int(seed)
        self.config = config
        self.spins = config.spins.copy()
        self.mask = config.mask
        self.reach = kernel.reach
        self.int_row = kernel.full_int_row()
        self.s_total = kernel.int_total

        ys, xs = np.nonzero(self.mask)
        self.site_x = xs.astype(np.int64)
        self.site_y = ys.astype(np.int64)
        self.n_sites = len(xs)

        rows, cols = self.mask.shape
        lookup = np.full((rows, cols), -1, dtype=np.int64)
        lookup[ys, xs] = np.arange(self.n_sites)
        # vertical bond partners (inside the box only)
        self.partner_y = np.full(self.n_sites, -1, dtype=np.int64)
        ks = self.site_x // config.ell_plus
        up = (ks + self.site_y) % 2 == 0
        cand_y = np.where(up, self.site_y + 1, self.site_y - 1)
        ok = (cand_y >= 0) & (cand_y < rows)
        ok[ok] &= self.mask[cand_y[ok], self.site_x[ok]]
        self.partner_y[ok] = cand_y[ok]
        self.has_partner = ok

        # dynamic integer field over the column-padded grid
        member = np.where(self.mask, self.spins, np.int8(0)).astype(np.int64)
        self.field_dyn = np.zeros((rows, cols + 2 * self.reach), dtype=np.int64)
        for i in range(rows):
            self.field_dyn[i] = np.convolve(member[i], self.int_row, mode="full")
        # static integer field from the collar and any notch cells
        bgrid = lattice.boundary_spin_grid(config, self.reach)
        bgrid[self.site_y, self.site_x + self.reach] = 0
        self.field_static = np.zeros((rows, cols), dtype=np.int64)
        for i in range(rows):
            conv = np.convolve(bgrid[i], self.int_row, mode="full")
            self.field_static[i] = conv[2 * self.reach : 2 * self.reach + cols]

        self.rng = np.random.Generator(np.random.Philox(key=self.seed))
        self.steps_done = 0
        self._audit_err = 0

        center = np.argmin(
            (self.site_x - cols / 2.0) ** 2 + (self.site_y - rows / 2.0) ** 2
        )
        self.center_site = int(center)

    # -- core updates --------------------------------------------------------

    def local_field(self, t):
        x = self.site_x[t]
        y = self.site_y[t]
        h = (self.field_dyn[y, x + self.reach] + self.field_static[y, x]) / self.s_total
        if self.has_partner[t]:
            h += self.eps * self.spins[self.partner_y[t], x]
        return h

    def update_batch(self, site_idx, uniforms):
        reach2 = 2 * self.reach + 1
        glauber = self.dynamics == "glauber"
        spins = self.spins
        fdyn = self.field_dyn
        fstat = self.field_static
        s_total = self.s_total
        eps = self.eps
        row = self.int_row
        for t, u in zip(site_idx, uniforms):
            x = self.site_x[t]
            y = self.site_y[t]
            s = spins[y, x]
            h = (fdyn[y, x + self.reach] + fstat[y, x]) / s_total
            if self.has_partner[t]:
                h += eps * spins[self.partner_y[t], x]
            delta_e = 2.0 * s * h
            if glauber:
                accept = u < 1.0 / (1.0 + math.exp(delta_e))
            else:
                accept = delta_e <= 0.0 or u < math.exp(-delta_e)
            if accept:
                spins[y, x] = -s
                fdyn[y, x : x + reach2] += row * (-2 * int(s))
        self.steps_done += len(site_idx)

    def sweep(self):
        idx = self.rng.integers(0, self.n_sites, size=self.n_sites)
        us = self.rng.random(self.n_sites)
        self.update_batch(idx, us)

    def audit_fields(self):
        """Recompute the dynamic fields from scratch; must agree exactly."""
        member = np.where(self.mask, self.spins, np.int8(0)).astype(np.int64)
        for i in range(self.mask.shape[0]):
            fresh = np.convolve(member[i], self.int_row, mode="full")
            if not np.array_equal(fresh, self.field_dyn[i]):
                raise AssertionError(f"incremental field drift on row {i}")
        return True

    def energy(self):
        cfg = self.snapshot()
        return lattice.chessboard_energy(cfg, self.kernel, self.eps)

    def snapshot(self) -> SpinConfig:
        return SpinConfig(
            ell_plus=self.config.ell_plus,
            spins=self.spins.copy(),
            mask=self.mask.copy(),
            boundary=self.config.boundary,
            block_rows=self.config.block_rows,
            rect_cols=self.config.rect_cols,
            rect_rows=self.config.rect_rows,
        )

    def state_index(self):
        """Pack the member spins into one integer (tiny systems only)."""
        bits = (self.spins[self.site_y, self.site_x] > 0).astype(np.uint64)
        return int(bits @ (np.uint64(1) << np.arange(self.n_sites, dtype=np.uint64)))

    # -- checkpointing --------------------------------------------------------

    def checkpoint(self, sweep_index=0):
        state = self.rng.bit_generator.state
        return {
            "sweep_index": sweep_index,
            "steps_done": self.steps_done,
            "seed": self.seed,
            "dynamics": self.dynamics,
            "eps": self.eps,
            "rng_state": {
                "counter": state["state"]["counter"].tolist(),
                "key": state["state"]["key"].tolist(),
                "buffer": state["buffer"].tolist(),
                "buffer_pos": state["buffer_pos"],
                "has_uint32": state["has_uint32"],
                "uinteger": state["uinteger"],
            },
            "spins": base64.b64encode(self.snapshot().to_bytes()).decode(),
        }

    def restore(self, chk):
        cfg = SpinConfig.from_bytes(base64.b64decode(chk["spins"]))
        if cfg.spins.shape != self.spins.shape:
            raise DomainError("checkpoint geometry does not match the sampler")
        self.spins = cfg.spins.copy()
        member = np.where(self.mask, self.spins, np.int8(0)).astype(np.int64)
        for i in range(self.mask.shape[0]):
            self.field_dyn[i] = np.convolve(member[i], self.int_row, mode="full")
        state = self.rng.bit_generator.state
        state["state"]["counter"] = np.array(chk["rng_state"]["counter"], dtype=np.uint64)
        state["state"]["key"] = np.array(chk["rng_state"]["key"], dtype=np.uint64)
        state["buffer"] = np.array(chk["rng_state"]["buffer"], dtype=np.uint64)
        state["buffer_pos"] = chk["rng_state"]["buffer_pos"]
        state["has_uint32"] = chk["rng_state"]["has_uint32"]
        state["uinteger"] = chk["rng_state"]["uinteger"]
        self.rng.bit_generator.state = state
        self.steps_done = chk["steps_done"]
        return chk["sweep_index"]


def _autocorr_time(series):
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 8 or np.allclose(x, x[0]):
        return 1.0
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0:
        return 1.0
    tau = 1.0
    for k in range(1, min(n // 4, 2000)):
        rho = float(np.dot(x[:-k], x[k:])) / ((n - k) * var)
        if rho < 0.05:
            break
        tau += 2.0 * rho
    return tau


def _batch_se(series, n_batches=30):
    x = np.asarray(series, dtype=float)
    if len(x) < 2 * n_batches:
        n_batches = max(2, len(x) // 2)
    usable = (len(x) // n_batches) * n_batches
    means = x[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def run_chain(config: ChainConfig, kernel=None, return_sampler=False):
    """Run one chain from an all-boundary-phase start and collect
    observables.  Deterministic given config (the stream is a pure function
    of the seed)."""
    params = config.params
    if kernel is None:
        kernel = lattice.build_kernel(params.gamma)
    fill = 1 if config.boundary == "plus" else -1
    box = SpinConfig.rect_union(
        config.rect_cols,
        config.rect_rows,
        params.ell_plus,
        params.block_rows,
        fill=fill,
        boundary=config.boundary,
    )
    sampler = Sampler(box, kernel, config.eps, config.seed, config.dynamics)

    labels_on = config.track_labels and config.m_eps is not None
    if labels_on and not params.zeta < config.m_eps:
        labels_on = False   # labels undefined when zeta >= m_eps (e.g. eps=0)

    center_series = []
    block_series = []
    stream = []
    label_hist = {-1: 0, 0: 0, 1: 0} if labels_on else None
    big_hist = {-1: 0, 0: 0, 1: 0} if labels_on else None
    census = {} if labels_on else None
    next_audit = config.audit_every

    cx = sampler.site_x[sampler.center_site]
    cy = sampler.site_y[sampler.center_site]
    ell_m = params.ell_minus
    blk_lo = int(cx // ell_m) * ell_m
    # full-width rows only: the ragged edge rows are short segments pinned
    # by the collar on both sides and would bias the patch average
    patch_rows = sampler.mask.all(axis=1)
    if not patch_rows.any():
        patch_rows = sampler.mask[:, blk_lo : blk_lo + ell_m].all(axis=1)
    patch_series = []

    for sweep in range(1, config.sweeps + 1):
        sampler.sweep()
        if sampler.steps_done >= next_audit:
            sampler.audit_fields()
            next_audit += config.audit_every
        if sweep <= config.burn_in or (sweep - config.burn_in) % config.sample_every:
            continue
        center = int(sampler.spins[cy, cx])
        block = float(sampler.spins[cy, blk_lo : blk_lo + ell_m].mean())
        patch = float(
            sampler.spins[patch_rows, blk_lo : blk_lo + ell_m].mean()
        )
        center_series.append(center)
        block_series.append(block)
        patch_series.append(patch)
        n_contours = 0
        max_contour = 0
        if labels_on:
            snap = sampler.snapshot()
            labels = lattice.compute_labels(snap, params, config.m_eps)
            vals, counts = np.unique(
                labels.eta[labels.eta != lattice.BlockLabels.NON_MEMBER],
                return_counts=True,
            )
            for v, c in zip(vals, counts):
                label_hist[int(v)] += int(c)
            bvals, bcounts = np.unique(labels.big_theta, return_counts=True)
            for v, c in zip(bvals, bcounts):
                big_hist[int(v)] += int(c)
            try:
                contours = lattice.extract_contours(labels)
            except lattice.BoundaryError:
                contours = None
            if contours is not None:
                n_contours = len(contours)
                for c in contours:
                    census[c.size] = census.get(c.size, 0) + 1
                max_contour = max((c.size for c in contours), default=0)
        stream.append((sweep, center, block, n_contours, max_contour))

    center_arr = np.array(center_series, dtype=float)
    patch_arr = np.array(patch_series, dtype=float)
    obs = Observables(
        mean_center_spin=float(center_arr.mean()),
        se_center_spin=_batch_se(center_arr),
        mean_center_patch=float(patch_arr.mean()),
        se_center_patch=_batch_se(patch_arr),
        mean_box_spin=float(
            sampler.spins[sampler.site_y, sampler.site_x].mean()
        ),
        mean_block_mag=float(np.mean(block_series)),
        autocorr_time=_autocorr_time(center_arr),
        n_samples=len(center_series),
        label_histogram={"eta": label_hist, "big_theta": big_hist}
        if labels_on
        else None,
        contour_census=census,
        stream=stream,
        patch_series=patch_series,
    )
    if return_sampler:
        return obs, sampler
    return obs


# ---------------------------------------------------------------------------
# exact enumeration for tiny systems
# ---------------------------------------------------------------------------

def _coupling_matrix(config: SpinConfig, kernel: KacKernel):
    """Float couplings between member sites plus the static boundary field
    and the vertical bond list, for vectorized exact energies."""
    ys, xs = np.nonzero(config.mask)
    n = len(xs)
    w = kernel.full_float_row()
    reach = kernel.reach
    coup = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            if ys[a] == ys[b]:
                off = abs(int(xs[a]) - int(xs[b]))
                if 0 < off <= reach:
                    coup[a, b] = coup[b, a] = w[reach + off]
    bgrid = lattice.boundary_spin_grid(config, reach).astype(float)
    bgrid[ys, xs + reach] = 0.0
    bfield = np.zeros(n)
    for t in range(n):
        seg = bgrid[ys[t], xs[t] : xs[t] + 2 * reach + 1]
        bfield[t] = float(np.dot(seg, w))
    pairs = []
    lookup = {(int(x), int(y)): t for t, (x, y) in enumerate(zip(xs, ys))}
    px, py = lattice.vertical_pairs(config)
    for x, y in zip(px, py):
        pairs.append((lookup[(int(x), int(y))], lookup[(int(x), int(y) + 1)]))
    return coup, bfield, pairs


def exact_distribution(config: SpinConfig, kernel: KacKernel, eps,
                       chunk=1 << 14):
    """Exact Gibbs probabilities over all member-spin states (state index:
    bit t set = site t up, sites in mask scan order)."""
    n = config.n_sites
    if n > ENUM_MAX_SITES:
        raise SizeError(f"{n} sites beyond enumeration cap {ENUM_MAX_SITES}")
    coup, bfield, pairs = _coupling_matrix(config, kernel)
    total = 1 << n
    energies = np.empty(total)
    bit_cols = np.arange(n, dtype=np.uint64)
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        states = np.arange(start, stop, dtype=np.uint64)
        spins = (
            ((states[:, None] >> bit_cols[None, :]) & np.uint64(1)).astype(float)
            * 2.0
            - 1.0
        )
        e = -0.5 * np.einsum("ci,ij,cj->c", spins, coup, spins)
        e -= spins @ bfield
        for a, b in pairs:
            e -= eps * spins[:, a] * spins[:, b]
        energies[start:stop] = e
    shifted = -(energies - energies.min())
    weights = np.exp(shifted)
    return weights / weights.sum(), energies


def enumerate_partition(config: SpinConfig, kernel: KacKernel, eps,
                        constraint=None, chunk=1 << 14):
    """log of the partition function (optionally restricted to the states a
    constraint predicate accepts).

    The constraint receives a (chunk, n_sites) +-1 spin matrix and returns
    a boolean row mask pairing each state.
    """
    n = config.n_sites
    if n > ENUM_MAX_SITES:
        raise SizeError(f"{n} sites beyond enumeration cap {ENUM_MAX_SITES}")
    coup, bfield, pairs = _coupling_matrix(config, kernel)
    total = 1 << n
    bit_cols = np.arange(n, dtype=np.uint64)
    best = -np.inf
    pieces = []
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        states = np.arange(start, stop, dtype=np.uint64)
        spins = (
            ((states[:, None] >> bit_cols[None, :]) & np.uint64(1)).astype(float)
            * 2.0
            - 1.0
        )
        e = -0.5 * np.einsum("ci,ij,cj->c", spins, coup, spins)
        e -= spins @ bfield
        for a, b in pairs:
            e -= eps * spins[:, a] * spins[:, b]
        if constraint is not None:
            keep = constraint(spins)
            e = e[keep]
            if len(e) == 0:
                continue
        pieces.append(-e)
        best = max(best, float((-e).max()))
    if not pieces:
        return -np.inf
    acc = sum(float(np.exp(p - best).sum()) for p in pieces)
    return best + math.log(acc)


def mirrored_pair(config: ChainConfig, kernel=None):
    """Run the chain and its global spin flip (mirrored boundary), same
    seed; returns both observable sets.  Trajectories are exactly opposite."""
    flipped = ChainConfig(
        rect_cols=config.rect_cols,
        rect_rows=config.rect_rows,
        params=config.params,
        eps=config.eps,
        boundary={"plus": "minus", "minus": "plus"}[config.boundary],
        seed=config.seed,
        sweeps=config.sweeps,
        burn_in=config.burn_in,
        sample_every=config.sample_every,
        dynamics=config.dynamics,
        m_eps=config.m_eps,
        track_labels=False,
        audit_every=config.audit_every,
    )
    base = ChainConfig(**{**config.__dict__, "track_labels": False})
    return run_chain(base, kernel=kernel), run_chain(flipped, kernel=kernel)

"""Signed measures as an atom list plus a cell density, and their pushforwards.

Pushforward under a concentrating map turns density into atoms: particles
(or, in 1-D, density strata with tracked end points) whose images cluster
within the merge tolerance are merged into atoms with summed signed weights,
so cancellation of opposite charges is exact and visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .lattice import Lattice, as_points

MERGE_FACTOR = 1e-6
COMPRESSION_RATIO = 1e-6
MAX_ATOMS_ND = 64


class MeasureError(ValueError):
    pass


def _merge_atoms(x: np.ndarray, w: np.ndarray, tol: float):
    """Greedy single-pass clustering after a lexicographic sort.

    Returns merged locations, summed weights and the cancelled mass
    ``sum |w_i| - |sum w_i|`` over all clusters. Zero-weight results are dropped.
    """
    if x.shape[0] == 0:
        return x.reshape(0, x.shape[1]), w[:0], 0.0
    order = np.lexsort(x.T[::-1])
    x, w = x[order], w[order]
    labels = np.empty(len(w), dtype=int)
    seeds = []
    current = -1
    for i in range(len(w)):
        if current >= 0 and np.max(np.abs(x[i] - seeds[current])) <= tol:
            labels[i] = current
        else:
            # look back over earlier clusters within reach (needed when d > 1)
            match = -1
            for c in range(len(seeds) - 1, max(-1, len(seeds) - 8), -1):
                if np.max(np.abs(x[i] - seeds[c])) <= tol:
                    match = c
                    break
            if match < 0:
                seeds.append(x[i])
                current = len(seeds) - 1
            else:
                current = match
            labels[i] = current
    k = len(seeds)
    absw = np.abs(w)
    mass = np.bincount(labels, weights=w, minlength=k)
    absmass = np.bincount(labels, weights=absw, minlength=k)
    loc = np.empty((k, x.shape[1]))
    for j in range(x.shape[1]):
        num = np.bincount(labels, weights=absw * x[:, j], minlength=k)
        plain = np.bincount(labels, weights=x[:, j], minlength=k) / np.bincount(labels, minlength=k)
        with np.errstate(invalid="ignore", divide="ignore"):
            loc[:, j] = np.where(absmass > 0, num / np.where(absmass > 0, absmass, 1.0), plain)
    cancelled = float(np.sum(absmass - np.abs(mass)))
    keep = mass != 0.0
    return loc[keep], mass[keep], cancelled


class HybridMeasure:
    """Signed measure ``sum_i w_i delta_{x_i} + f(x) dx`` with ``f`` constant on lattice cells.

    The density lattice gives cell centres; each cell has the lattice spacing as
    width. Atoms closer than ``merge_tol`` (sup norm) are merged at their
    ``|w|``-weighted mean.
    """

    def __init__(self, dim: int, atoms_x=None, atoms_w=None, lattice: Optional[Lattice] = None,
                 density=None, merge_tol: Optional[float] = None):
        self.dim = int(dim)
        ax = np.zeros((0, self.dim)) if atoms_x is None else as_points(atoms_x, self.dim)
        aw = np.zeros(0) if atoms_w is None else np.asarray(atoms_w, dtype=float).reshape(-1)
        if ax.shape[0] != aw.shape[0]:
            raise MeasureError("atom locations and weights differ in length")
        if lattice is not None and lattice.dim != self.dim:
            raise MeasureError("density lattice dimension mismatch")
        self.lattice = lattice
        if lattice is None:
            self.density = None
        else:
            vals = np.zeros(lattice.size) if density is None else np.asarray(density, dtype=float).reshape(-1)
            if vals.size != lattice.size:
                raise MeasureError("density size does not match the lattice")
            self.density = vals
        if merge_tol is None:
            merge_tol = MERGE_FACTOR * max(self._extent(ax), 1.0)
        self.merge_tol = float(merge_tol)
        self.atoms_x, self.atoms_w, self.cancelled_mass = _merge_atoms(ax, aw, self.merge_tol)

    def _extent(self, ax) -> float:
        spans = []
        if ax.shape[0]:
            spans.append(float(np.linalg.norm(ax.max(axis=0) - ax.min(axis=0))))
        if self.lattice is not None:
            spans.append(self.lattice.diameter)
        return max(spans) if spans else 0.0

    # constructors -----------------------------------------------------------
    @classmethod
    def from_atoms(cls, locations, weights, dim: int = 1, merge_tol=None) -> "HybridMeasure":
        return cls(dim, locations, weights, merge_tol=merge_tol)

    @classmethod
    def from_density(cls, lattice: Lattice, values, atoms_x=None, atoms_w=None, merge_tol=None) -> "HybridMeasure":
        if callable(values):
            values = np.asarray(values(lattice.points), dtype=float).reshape(-1)
        return cls(lattice.dim, atoms_x, atoms_w, lattice, values, merge_tol)

    @classmethod
    def zero(cls, dim: int = 1) -> "HybridMeasure":
        return cls(dim)

    # accounting -------------------------------------------------------------
    @property
    def cell_masses(self) -> np.ndarray:
        if self.density is None:
            return np.zeros(0)
        return self.density * self.lattice.cell_volume

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.atoms_w) + np.sum(self.cell_masses))

    @property
    def atom_mass(self) -> float:
        return float(np.sum(self.atoms_w))

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.atoms_w)) + np.sum(np.abs(self.cell_masses)))

    @property
    def is_nonnegative(self) -> bool:
        ok = np.all(self.atoms_w >= 0)
        return bool(ok and (self.density is None or np.all(self.density >= 0)))

    @property
    def has_atoms(self) -> bool:
        return self.atoms_w.size > 0

    def absolute(self) -> "HybridMeasure":
        """``|m|`` of this representation (atoms and cells taken separately)."""
        return HybridMeasure(self.dim, self.atoms_x, np.abs(self.atoms_w), self.lattice,
                             None if self.density is None else np.abs(self.density), self.merge_tol)

    def atom_weight_near(self, x, radius: float) -> float:
        x = as_points(x, self.dim)[0]
        if not self.has_atoms:
            return 0.0
        near = np.max(np.abs(self.atoms_x - x), axis=1) <= radius
        return float(np.sum(self.atoms_w[near]))

    def density_at(self, x) -> np.ndarray:
        """Cell value containing each point (0 outside the lattice)."""
        pts = as_points(x, self.dim)
        if self.lattice is None:
            return np.zeros(len(pts))
        idx = []
        inside = np.ones(len(pts), dtype=bool)
        for a, axis in enumerate(self.lattice.axes):
            h = axis[1] - axis[0]
            i = np.floor((pts[:, a] - axis[0]) / h + 0.5).astype(int)
            inside &= (i >= 0) & (i < axis.size)
            idx.append(np.clip(i, 0, axis.size - 1))
        flat = np.ravel_multi_index(idx, self.lattice.shape)
        return np.where(inside, self.density[flat], 0.0)

    def to_csv(self, path) -> None:
        d = self.dim
        coords = [f"x{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            fh.write("[atoms]\n" + ",".join(coords + ["w"]) + "\n")
            for x, w in zip(self.atoms_x, self.atoms_w):
                fh.write(",".join(repr(float(v)) for v in list(x) + [w]) + "\n")
            fh.write("[density]\n" + ",".join(coords + ["value"]) + "\n")
            if self.density is not None:
                for x, v in zip(self.lattice.points, self.density):
                    fh.write(",".join(repr(float(c)) for c in list(x) + [v]) + "\n")

    @classmethod
    def from_csv(cls, path) -> "HybridMeasure":
        section, atoms, dens, dim = None, [], [], None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line in ("[atoms]", "[density]"):
                    section = line[1:-1]
                    header = next(fh).strip().split(",")
                    dim = len(header) - 1
                    continue
                row = [float(v) for v in line.split(",")]
                (atoms if section == "atoms" else dens).append(row)
        if dim is None:
            raise MeasureError("not a measure CSV")
        atoms = np.array(atoms).reshape(-1, dim + 1)
        lattice, values = None, None
        if dens:
            dens = np.array(dens)
            axes = tuple(np.unique(dens[:, j]) for j in range(dim))
            lattice = Lattice(axes)
            values = dens[:, -1]
        return cls(dim, atoms[:, :dim], atoms[:, dim], lattice, values)

    def __repr__(self):
        return (f"HybridMeasure(dim={self.dim}, atoms={self.atoms_w.size}, "
                f"mass={self.total_mass:.6g}, tv={self.total_variation:.6g})")


@dataclass(eq=False)
class ParticleCloud:
    """Weighted particles discretizing a measure.

    In 1-D, density particles also carry the end points of their stratum
    (``edges``, length ``n_density + 1``) so transported strata keep width.
    """

    positions: np.ndarray
    weights: np.ndarray
    is_atom: np.ndarray
    source_mass: float
    edges: Optional[np.ndarray] = None

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))


def _cell_edges_1d(lattice: Lattice):
    c = lattice.axes[0]
    h = c[1] - c[0]
    return np.concatenate([c - 0.5 * h, [c[-1] + 0.5 * h]])


def discretize(m: HybridMeasure, n: int) -> ParticleCloud:
    """Atoms verbatim; density by |f|-quantile strata (1-D) or cell centres (d >= 2)."""
    k = m.atoms_w.size
    if n < k:
        raise MeasureError(f"need at least {k} particles for the atoms")
    pos = [m.atoms_x]
    wts = [m.atoms_w]
    is_atom = [np.ones(k, dtype=bool)]
    edges = None
    masses = m.cell_masses
    if masses.size and np.any(masses != 0):
        if m.dim == 1:
            n_dens = n - k
            if n_dens < 1:
                raise MeasureError("no particles left for the density")
            e = _cell_edges_1d(m.lattice)
            abs_cum = np.concatenate([[0.0], np.cumsum(np.abs(masses))])
            sgn_cum = np.concatenate([[0.0], np.cumsum(masses)])
            total_abs = abs_cum[-1]

            def quantile(levels):
                i = np.clip(np.searchsorted(abs_cum, levels, side="left"), 1, len(abs_cum) - 1)
                lo, hi = abs_cum[i - 1], abs_cum[i]
                frac = np.where(hi > lo, (levels - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
                return e[i - 1] + frac * (e[i] - e[i - 1]), i - 1, frac

            q_edges = total_abs * np.arange(n_dens + 1) / n_dens
            x_edges, cell, frac = quantile(q_edges)
            x_edges[0], x_edges[-1] = e[0], e[-1]
            signed = sgn_cum[cell] + frac * masses[np.clip(cell, 0, masses.size - 1)]
            signed[0], signed[-1] = 0.0, sgn_cum[-1]
            mids, _, _ = quantile(total_abs * (np.arange(n_dens) + 0.5) / n_dens)
            pos.append(mids.reshape(-1, 1))
            wts.append(np.diff(signed))
            is_atom.append(np.zeros(n_dens, dtype=bool))
            edges = x_edges
        else:
            nz = masses != 0
            pos.append(m.lattice.points[nz])
            wts.append(masses[nz])
            is_atom.append(np.zeros(int(nz.sum()), dtype=bool))
    return ParticleCloud(np.concatenate(pos), np.concatenate(wts), np.concatenate(is_atom),
                         m.total_mass, edges)


def _deposit_strata(a: np.ndarray, b: np.ndarray, w: np.ndarray, cell_edges: np.ndarray) -> np.ndarray:
    """Mass of uniform pieces ``[a_j, b_j]`` (weight ``w_j``) falling in each cell.

    Uses ``C(x) = sum_j s_j (R(x - a_j) - R(x - b_j))`` with ``R = max(., 0)``
    and slopes ``s_j = w_j / (b_j - a_j)``, evaluated by sorted cumulative sums.
    """
    s = w / (b - a)

    def ramp_sum(starts, slopes, x):
        order = np.argsort(starts, kind="stable")
        st, sl = starts[order], slopes[order]
        c_sl = np.concatenate([[0.0], np.cumsum(sl)])
        c_st = np.concatenate([[0.0], np.cumsum(sl * st)])
        i = np.searchsorted(st, x, side="right")
        return x * c_sl[i] - c_st[i]

    cum = ramp_sum(a, s, cell_edges) - ramp_sum(b, s, cell_edges)
    return np.diff(cum)


def push_forward_by(m: HybridMeasure, mapping: Callable[[np.ndarray], np.ndarray],
                    target: Optional[Lattice] = None, n_particles: Optional[int] = None,
                    merge_tol: Optional[float] = None) -> tuple:
    """Pushforward of ``m`` by a point map.

    Returns ``(measure, report)``; the report lists the cancelled mass inside
    merged clusters and the mass converted from density into atoms. In 1-D a
    density stratum becomes an atom candidate when its image is shorter than
    ``COMPRESSION_RATIO`` times its own length; candidates then merge at
    ``merge_tol``.
    """
    target = m.lattice if target is None else target
    if merge_tol is None:
        span = target.diameter if target is not None else 0.0
        merge_tol = MERGE_FACTOR * max(span, m._extent(m.atoms_x), 1.0)
    dens_cells = int(np.count_nonzero(m.cell_masses)) if m.density is not None else 0
    n = n_particles if n_particles is not None else m.atoms_w.size + 2 * max(dens_cells, 0)
    cloud = discretize(m, max(n, m.atoms_w.size))
    atom_x = [np.asarray(mapping(cloud.positions[cloud.is_atom]), dtype=float).reshape(-1, m.dim)]
    atom_w = [cloud.weights[cloud.is_atom]]
    values = None
    concentrated = 0.0
    dens_idx = ~cloud.is_atom
    if np.any(dens_idx):
        if target is None:
            raise MeasureError("a density needs a target lattice")
        w = cloud.weights[dens_idx]
        if m.dim == 1:
            ends = np.asarray(mapping(cloud.edges.reshape(-1, 1)), dtype=float).reshape(-1)
            a, b = ends[:-1], ends[1:]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            # a stratum whose image shrinks by more than COMPRESSION_RATIO sits on {J = 0}
            thin = (hi - lo) <= COMPRESSION_RATIO * np.diff(cloud.edges)
            centers = np.asarray(mapping(cloud.positions[dens_idx]), dtype=float).reshape(-1, 1)
            atom_x.append(centers[thin])
            atom_w.append(w[thin])
            concentrated = float(np.sum(np.abs(w[thin])))
            ce = _cell_edges_1d(target)
            spread = ~thin & (w != 0)
            if np.any(lo[spread] < ce[0] - 1e-12) or np.any(hi[spread] > ce[-1] + 1e-12):
                raise MeasureError("pushforward support escapes the target lattice")
            masses = _deposit_strata(lo[spread], hi[spread], w[spread], ce)
            values = masses / target.cell_volume
        else:
            moved = np.asarray(mapping(cloud.positions[dens_idx]), dtype=float).reshape(-1, m.dim)
            values, extra_x, extra_w, concentrated = _deposit_nd(moved, w, target, merge_tol)
            atom_x.append(extra_x)
            atom_w.append(extra_w)
    ax = np.concatenate(atom_x) if atom_x else np.zeros((0, m.dim))
    aw = np.concatenate(atom_w) if atom_w else np.zeros(0)
    if values is not None and target is None:
        raise MeasureError("a density needs a target lattice")
    out = HybridMeasure(m.dim, ax, aw, target if values is not None else None, values, merge_tol)
    report = {"cancelled_mass": out.cancelled_mass, "concentrated_mass": concentrated,
              "merge_tol": merge_tol, "particles": int(cloud.weights.size)}
    return out, report


def _deposit_nd(points, w, target: Lattice, tol):
    """Nearest-cell deposit; clusters of several particles within ``tol`` become atoms."""
    order = np.lexsort(points.T[::-1])
    pts, ww = points[order], w[order]
    close = np.zeros(len(ww), dtype=bool)
    if len(ww) > 1:
        gap = np.max(np.abs(np.diff(pts, axis=0)), axis=1) <= tol
        close[1:] |= gap
        close[:-1] |= gap
    values = np.zeros(target.size)
    rest = ~close
    idx = []
    for a, axis in enumerate(target.axes):
        h = axis[1] - axis[0]
        i = np.floor((pts[rest, a] - axis[0]) / h + 0.5).astype(int)
        if np.any(i < 0) or np.any(i >= axis.size):
            raise MeasureError("pushforward support escapes the target lattice")
        idx.append(i)
    if idx and rest.any():
        np.add.at(values, np.ravel_multi_index(idx, target.shape), ww[rest])
    return values / target.cell_volume, pts[close], ww[close], float(np.sum(np.abs(ww[close])))


def push_forward(m: HybridMeasure, fmap, t: float, target: Optional[Lattice] = None,
                 n_particles: Optional[int] = None) -> HybridMeasure:
    """Pushforward of ``m`` by ``phi_{0,t}`` read from a backward flow map anchored at ``t``.

    The map is interpolated linearly off-lattice (1-D); the support of ``m``
    must lie inside the map window.
    """
    if fmap.direction != "backward" or abs(fmap.s - t) > 1e-12:
        raise MeasureError("push_forward needs a backward map anchored at t")

    def mapping(x):
        try:
            return fmap.interpolate(0.0, x)
        except Exception as exc:  # window exceeded
            raise MeasureError(f"support escapes the flow map range: {exc}") from exc

    return push_forward_by(m, mapping, target, n_particles)[0]


# ---------------------------------------------------------------------------
# Wasserstein distances


def _segments_1d(m: HybridMeasure):
    """Mass-ordered segments ``(start, end, mass)``; atoms have ``start == end``."""
    starts, ends, masses = [], [], []
    if m.density is not None:
        e = _cell_edges_1d(m.lattice)
        cm = m.cell_masses
        nz = cm > 0
        l, r, cmass = e[:-1][nz], e[1:][nz], cm[nz]
        cuts = np.sort(m.atoms_x[:, 0]) if m.has_atoms else np.zeros(0)
        for lo, hi, mass in zip(l, r, cmass):
            inner = cuts[(cuts > lo) & (cuts < hi)]
            pts = np.concatenate([[lo], inner, [hi]])
            frac = np.diff(pts) / (hi - lo)
            starts.extend(pts[:-1])
            ends.extend(pts[1:])
            masses.extend(mass * frac)
    if m.has_atoms:
        starts.extend(m.atoms_x[:, 0])
        ends.extend(m.atoms_x[:, 0])
        masses.extend(m.atoms_w)
    starts, ends, masses = map(np.asarray, (starts, ends, masses))
    order = np.lexsort((ends, starts))
    return starts[order], ends[order], masses[order]


def _quantile_pieces(m: HybridMeasure, levels: np.ndarray) -> tuple:
    """Left and right limits of the quantile function on each level interval."""
    s, e, w = _segments_1d(m)
    cum = np.concatenate([[0.0], np.cumsum(w)])
    cum /= cum[-1]
    mids = 0.5 * (levels[1:] + levels[:-1])
    k = np.clip(np.searchsorted(cum, mids, side="right") - 1, 0, len(w) - 1)
    span = cum[k + 1] - cum[k]

    def eval_at(q):
        frac = np.where(span > 0, (q - cum[k]) / np.where(span > 0, span, 1.0), 0.0)
        return s[k] + np.clip(frac, 0.0, 1.0) * (e[k] - s[k])

    return eval_at(levels[:-1]), eval_at(levels[1:])


def _check_probability(m: HybridMeasure, name: str):
    if not m.is_nonnegative:
        raise MeasureError(f"{name} is signed")
    if abs(m.total_mass - 1.0) > 1e-9:
        raise MeasureError(f"{name} has mass {m.total_mass}, expected 1")


def _abs_power_integral(v0, v1, dq, p):
    """``int |v|^p`` for ``v`` linear from ``v0`` to ``v1`` over a length ``dq``."""
    out = np.zeros_like(v0)
    cross = (v0 * v1) < 0
    same = ~cross
    a0, a1 = np.abs(v0[same]), np.abs(v1[same])
    diff = a1 - a0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(np.abs(diff) > 1e-14 * np.maximum(a0, a1),
                       (a1 ** (p + 1) - a0 ** (p + 1)) / ((p + 1) * np.where(diff == 0, 1.0, diff)),
                       a0 ** p)
    out[same] = dq[same] * val
    if np.any(cross):
        c0, c1, cq = np.abs(v0[cross]), np.abs(v1[cross]), dq[cross]
        root = c0 / (c0 + c1)
        out[cross] = cq * (root * c0 ** p + (1 - root) * c1 ** p) / (p + 1)
    return out


def wasserstein(mu: HybridMeasure, nu: HybridMeasure, p: float = 1.0) -> float:
    """``W_p`` between probability measures.

    1-D: exact integral of ``|F^-1 - G^-1|^p`` over merged quantile levels,
    valid for any atom/density mixture. Higher dimension: atomic measures with
    at most 64 atoms, solved as a discrete transport linear program.
    """
    if mu.dim != nu.dim:
        raise MeasureError("dimension mismatch")
    _check_probability(mu, "mu")
    _check_probability(nu, "nu")
    if p < 1:
        raise MeasureError("order p must be >= 1")
    if mu.dim == 1:
        def levels(m):
            _, _, w = _segments_1d(m)
            c = np.concatenate([[0.0], np.cumsum(w)])
            return c / c[-1]

        q = np.unique(np.concatenate([levels(mu), levels(nu)]))
        q = q[(q >= 0) & (q <= 1)]
        ml, mr = _quantile_pieces(mu, q)
        nl, nr = _quantile_pieces(nu, q)
        v0, v1 = ml - nl, mr - nr
        if math.isinf(p):
            return float(np.max(np.maximum(np.abs(v0), np.abs(v1))))
        total = float(np.sum(_abs_power_integral(v0, v1, np.diff(q), p)))
        return total ** (1.0 / p)
    if mu.density is not None or nu.density is not None:
        raise MeasureError("multi-dimensional distances need atomic measures")
    if mu.atoms_w.size > MAX_ATOMS_ND or nu.atoms_w.size > MAX_ATOMS_ND:
        raise MeasureError(f"at most {MAX_ATOMS_ND} atoms per measure in d >= 2")
    if math.isinf(p):
        raise MeasureError("W_inf is only available in one dimension")
    return discrete_transport(mu.atoms_x, mu.atoms_w, nu.atoms_x, nu.atoms_w, p)


def discrete_transport(x, a, y, b, p: float) -> float:
    """Exact optimal transport between two finite weighted point sets."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if x.shape[1] != y.shape[1]:
        x, y = x.reshape(len(a), -1), y.reshape(len(b), -1)
    cost = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2) ** p
    n, k = cost.shape
    rows = np.zeros((n, n * k))
    cols = np.zeros((k, n * k))
    for i in range(n):
        rows[i, i * k:(i + 1) * k] = 1.0
    for j in range(k):
        cols[j, j::k] = 1.0
    res = linprog(cost.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise MeasureError(f"transport solve failed: {res.message}")
    return float(max(res.fun, 0.0) ** (1.0 / p))


def pair(m: HybridMeasure, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """``int g dm``: atoms exactly, density by the cell midpoint rule."""
    total = 0.0
    if m.has_atoms:
        total += float(np.sum(m.atoms_w * np.asarray(g(m.atoms_x), dtype=float).reshape(-1)))
    if m.density is not None:
        nz = m.density != 0
        if np.any(nz):
            vals = np.asarray(g(m.lattice.points[nz]), dtype=float).reshape(-1)
            total += float(np.sum(m.density[nz] * vals) * m.lattice.cell_volume)
    return total

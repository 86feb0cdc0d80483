"""One-sided Lipschitz (OSL) velocity fields.

A field ``b(t, x)`` is admissible when

    |b(t, x)| <= c0(t) (1 + |x|)   and   (b(t,x) - b(t,y)) . (x - y) >= -c1(t) |x - y|^2

with piecewise-constant rates ``c0`` and ``c1``. This module holds the field
type, a catalog of closed-form examples (with exact flows and Jacobians),
spatial mollification by a fixed polynomial bump, semicontinuous envelopes
``liminf/limsup b(t, z) . p`` and an empirical audit of both bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .lattice import as_points

SMOOTHNESS_TAGS = ("smooth", "continuous", "discontinuous")

GAUSS_ORDER = 8
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_ORDER)

# rho(z) = (35/32) (1 - z^2)^3 on [-1, 1], unit mass, C^2 at the edges
_BUMP_NORM = 35.0 / 32.0


class FieldError(ValueError):
    """Invalid field construction or evaluation request."""


def bump(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1.0, _BUMP_NORM * (1.0 - z * z) ** 3, 0.0)


def bump_derivative(z):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1.0, -6.0 * _BUMP_NORM * z * (1.0 - z * z) ** 2, 0.0)


@dataclass(frozen=True)
class StepFunction:
    """Nonnegative right-continuous step function on ``[breaks[0], breaks[-1]]``."""

    breaks: tuple
    values: tuple

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        values = tuple(float(v) for v in self.values)
        if len(breaks) != len(values) + 1 or len(values) == 0:
            raise FieldError("step function needs len(breaks) == len(values) + 1")
        if breaks[0] != 0.0 or any(b1 <= b0 for b0, b1 in zip(breaks, breaks[1:])):
            raise FieldError("breaks must start at 0 and increase strictly")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise FieldError("step values must be finite and nonnegative")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float, horizon: float) -> "StepFunction":
        return cls((0.0, float(horizon)), (float(value),))

    @property
    def horizon(self) -> float:
        return self.breaks[-1]

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.horizon * (1 + 1e-12) + 1e-12):
            raise FieldError(f"time outside [0, {self.horizon}]")
        return t

    def __call__(self, t):
        t = self._check(t)
        idx = np.searchsorted(np.asarray(self.breaks[1:-1]), t, side="right")
        out = np.asarray(self.values)[idx]
        return float(out) if out.ndim == 0 else out

    def integral(self, a: float, b: float) -> float:
        """Exact integral over ``[a, b]``; negative when ``b < a``."""
        if b < a:
            return -self.integral(b, a)
        self._check([a, b])
        total = 0.0
        for lo, hi, v in zip(self.breaks, self.breaks[1:], self.values):
            left, right = max(lo, a), min(hi, b)
            if right > left:
                total += v * (right - left)
        return total


@dataclass(frozen=True)
class OSLConstants:
    c0: StepFunction
    c1: StepFunction

    def __post_init__(self):
        if abs(self.c0.horizon - self.c1.horizon) > 1e-12:
            raise FieldError("c0 and c1 must share the horizon")

    @classmethod
    def constant(cls, c0: float, c1: float, horizon: float) -> "OSLConstants":
        return cls(StepFunction.constant(c0, horizon), StepFunction.constant(c1, horizon))

    @property
    def horizon(self) -> float:
        return self.c0.horizon

    def compression_bound(self, t: float, s: float, dim: int) -> float:
        """Sup bound ``exp(d * int_t^s c1)`` for backward Jacobians and preimage ratios."""
        return math.exp(dim * self.c1.integral(min(t, s), max(t, s)))

    def lipschitz_bound(self, t: float, s: float) -> float:
        return math.exp(self.c1.integral(min(t, s), max(t, s)))

    def growth_radius(self, radius: float, t: float, s: float) -> float:
        """Bound on ``|phi|`` for trajectories started in the ball of ``radius``.

        From ``|b| <= c0 (1 + |x|)``: ``1 + |phi| <= (1 + |x|) exp(int c0)``.
        """
        return (1.0 + radius) * math.exp(self.c0.integral(min(t, s), max(t, s))) - 1.0


Oracle = Callable[..., np.ndarray]


class VelocityField:
    """Vectorised velocity field ``b(t, x)`` on ``R^dim`` with OSL constants.

    Args:
        dim: spatial dimension.
        func: ``func(t, points)`` with ``points`` of shape ``(n, dim)``,
            returning an ``(n, dim)`` array.
        constants: growth and OSL rates.
        smoothness: one of ``smooth``, ``continuous``, ``discontinuous``.
        name, params: catalog identity (for manifests and CSV headers).
        kinks: ``kinks(t)`` returns, per axis, coordinates where ``b`` fails
            to be smooth along that axis; mollification splits its quadrature
            there.
        flow_oracle: exact backward flow ``(t, s, points) -> phi_{t,s}``.
        jacobian_oracle: exact ``(t, s, points) -> J_{t,s}``.
        divergence: pointwise ``(t, points) -> div b``.
        gradient: pointwise ``(t, points) -> (n, dim, dim)``.
        envelope_oracle: exact ``(t, x, p, side) -> liminf/limsup b . p``.

    ``autonomous`` marks fields that do not depend on ``t``.
    """

    autonomous = False

    def __init__(
        self,
        dim: int,
        func: Callable[[float, np.ndarray], np.ndarray],
        constants: OSLConstants,
        smoothness: str,
        name: str = "custom",
        params: Sequence[float] = (),
        kinks: Optional[Callable[[float], Sequence[Sequence[float]]]] = None,
        flow_oracle: Optional[Oracle] = None,
        jacobian_oracle: Optional[Oracle] = None,
        divergence: Optional[Oracle] = None,
        gradient: Optional[Oracle] = None,
        envelope_oracle: Optional[Oracle] = None,
    ):
        if int(dim) < 1:
            raise FieldError("dimension must be positive")
        if smoothness not in SMOOTHNESS_TAGS:
            raise FieldError(f"smoothness must be one of {SMOOTHNESS_TAGS}")
        self.dim = int(dim)
        self.func = func
        self.constants = constants
        self.smoothness = smoothness
        self.name = name
        self.params = tuple(float(p) for p in params)
        self.kinks = kinks
        self.flow_oracle = flow_oracle
        self.jacobian_oracle = jacobian_oracle
        self._divergence = divergence
        self._gradient = gradient
        self.envelope_oracle = envelope_oracle

    def __call__(self, t: float, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        return np.asarray(self.func(float(t), pts), dtype=float).reshape(pts.shape)

    @property
    def horizon(self) -> float:
        return self.constants.horizon

    @property
    def has_gradient(self) -> bool:
        return self._gradient is not None

    def gradient(self, t: float, x) -> np.ndarray:
        if self._gradient is None:
            raise FieldError(f"field {self.name!r} has no pointwise gradient; mollify it first")
        pts = as_points(x, self.dim)
        return np.asarray(self._gradient(float(t), pts), dtype=float)

    def divergence(self, t: float, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        if self._divergence is not None:
            return np.asarray(self._divergence(float(t), pts), dtype=float).reshape(-1)
        return np.trace(self.gradient(t, pts), axis1=1, axis2=2)

    def kink_positions(self, t: float) -> list:
        if self.kinks is None:
            return [np.empty(0) for _ in range(self.dim)]
        return [np.asarray(k, dtype=float).reshape(-1) for k in self.kinks(float(t))]

    def describe(self) -> dict:
        return {"name": self.name, "params": list(self.params), "dim": self.dim,
                "smoothness": self.smoothness}

    def __repr__(self):
        return f"VelocityField({self.name!r}, params={self.params}, dim={self.dim})"


class MollifiedField(VelocityField):
    """Spatial convolution ``b * rho_eps`` with the product polynomial bump.

    The kernel is ``prod_i rho(z_i)`` with ``rho(z) = 35/32 (1 - z^2)^3``.
    Each axis is integrated with order-8 Gauss-Legendre, split at the base
    field's kink coordinates so that piecewise-smooth fields are integrated
    to quadrature accuracy. Gradients are obtained by moving the derivative
    onto the kernel, so the base field is never differentiated.
    """

    def __init__(self, base: VelocityField, eps: float):
        if not (eps > 0 and math.isfinite(eps)):
            raise FieldError("mollification radius must be positive")
        c0 = base.constants.c0
        # |b*rho| <= c0 (1 + |x| + eps sqrt(d)) <= c0 (1 + eps sqrt(d)) (1 + |x|)
        shift = 1.0 + eps * math.sqrt(base.dim)
        c0_moll = StepFunction(c0.breaks, tuple(v * shift for v in c0.values))
        super().__init__(
            base.dim,
            self._evaluate,
            OSLConstants(c0_moll, base.constants.c1),
            "smooth",
            name=base.name,
            params=base.params,
            gradient=self._evaluate_gradient,
        )
        self.base = base
        self.eps = float(eps)
        self.autonomous = base.autonomous

    def _axis_rules(self, t: float, pts: np.ndarray, derivative: bool):
        """Per-axis nodes (n, m) with value (and optionally derivative) weights."""
        kinks = self.base.kink_positions(t)
        n = pts.shape[0]
        rules = []
        for axis in range(self.dim):
            ks = kinks[axis]
            if ks.size:
                cuts = np.clip((pts[:, axis:axis + 1] - ks[None, :]) / self.eps, -1.0, 1.0)
                if ks.size > 1:
                    cuts.sort(axis=1)
                edges = np.empty((n, ks.size + 2))
                edges[:, 0] = -1.0
                edges[:, -1] = 1.0
                edges[:, 1:-1] = cuts
            else:
                edges = np.tile([-1.0, 1.0], (n, 1))
            half = 0.5 * (edges[:, 1:] - edges[:, :-1])
            mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
            z = (mid[:, :, None] + half[:, :, None] * _GL_NODES).reshape(n, -1)
            w = (half[:, :, None] * _GL_WEIGHTS).reshape(n, -1)
            # nodes lie in [-1, 1] by construction, so the bump needs no masking
            u = 1.0 - z * z
            value_w = w * (_BUMP_NORM * u * u * u)
            deriv_w = w * (-6.0 * _BUMP_NORM * z * u * u) if derivative else None
            rules.append((z, value_w, deriv_w))
        return rules

    def _tensor(self, t: float, pts: np.ndarray, derivative: bool = False):
        rules = self._axis_rules(t, pts, derivative)
        n = pts.shape[0]
        if self.dim == 1:
            idx = [np.arange(rules[0][0].shape[1])]
            z = rules[0][0][:, :, None]
            wv = rules[0][1]
        else:
            grids = np.meshgrid(*[np.arange(r[0].shape[1]) for r in rules], indexing="ij")
            idx = [g.ravel() for g in grids]
            z = np.stack([rules[a][0][:, idx[a]] for a in range(self.dim)], axis=2)
            wv = np.ones((n, idx[0].size))
            for a in range(self.dim):
                wv = wv * rules[a][1][:, idx[a]]
        samples = pts[:, None, :] - self.eps * z
        values = np.asarray(self.base.func(t, samples.reshape(-1, self.dim)), dtype=float)
        return rules, idx, values.reshape(n, -1, self.dim), wv

    def _evaluate(self, t: float, pts: np.ndarray) -> np.ndarray:
        _, _, values, wv = self._tensor(t, pts)
        return np.einsum("nm,nmd->nd", wv, values)

    def _evaluate_gradient(self, t: float, pts: np.ndarray) -> np.ndarray:
        rules, idx, values, _ = self._tensor(t, pts, derivative=True)
        n = pts.shape[0]
        grad = np.empty((n, self.dim, self.dim))
        for j in range(self.dim):
            wj = np.ones((n, idx[0].size))
            for a in range(self.dim):
                wj = wj * (rules[a][2] if a == j else rules[a][1])[:, idx[a]]
            grad[:, :, j] = np.einsum("nm,nmd->nd", wj, values) / self.eps
        return grad


def mollify(field: VelocityField, eps: float) -> MollifiedField:
    """Return ``b^eps = b * rho_eps``; the OSL rate ``c1`` is unchanged."""
    return MollifiedField(field, eps)


def envelope(field: VelocityField, t: float, x, p, side: str, r0: float = 1.0,
             levels: int = 20) -> float:
    """Lower (``liminf``) or upper (``limsup``) envelope of ``b(t, z) . p`` as ``z -> x``.

    Catalog fields carry an exact oracle. Otherwise ``b . p`` is sampled on
    the shells of radii ``2^-k r0`` (k = 0..levels) along coordinate and
    diagonal directions, and the extremum over the innermost ball is returned.
    """
    if side not in ("lower", "upper"):
        raise FieldError("side must be 'lower' or 'upper'")
    x = as_points(x, field.dim)[0]
    p = np.asarray(p, dtype=float).reshape(field.dim)
    if not np.all(np.isfinite(p)):
        raise FieldError("direction must be finite")
    if field.envelope_oracle is not None:
        return float(field.envelope_oracle(t, x, p, side))
    if field.smoothness != "discontinuous":
        return float(field(t, x) @ p)
    radius = r0 * 2.0 ** (-levels)
    samples = np.concatenate([x[None, :], x[None, :] + radius * _shell_directions(field.dim)])
    values = field(t, samples) @ p
    return float(values.min() if side == "lower" else values.max())


def envelope_profile(field: VelocityField, t: float, x, p, side: str, r0: float = 1.0,
                     levels: int = 20) -> np.ndarray:
    """Sampled envelope for every radius ``2^-k r0``; useful to inspect convergence."""
    x = as_points(x, field.dim)[0]
    p = np.asarray(p, dtype=float).reshape(field.dim)
    dirs = _shell_directions(field.dim)
    out = []
    for k in range(levels + 1):
        radius = r0 * 2.0 ** (-k)
        fractions = np.array([1.0, 0.5, 0.25])
        pts = x[None, :] + (radius * fractions[:, None, None] * dirs[None]).reshape(-1, field.dim)
        vals = field(t, np.concatenate([x[None, :], pts])) @ p
        out.append(vals.min() if side == "lower" else vals.max())
    return np.array(out)


def _shell_directions(dim: int) -> np.ndarray:
    eye = np.eye(dim)
    dirs = [eye, -eye]
    if dim > 1:
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij")).reshape(dim, -1).T
        dirs.append(corners / math.sqrt(dim))
    return np.concatenate(dirs)


@dataclass(frozen=True)
class OSLAuditReport:
    n_pairs: int
    max_osl_violation: float
    max_growth_violation: float
    tol: float
    worst_pair: tuple

    @property
    def passed(self) -> bool:
        return self.max_osl_violation <= self.tol and self.max_growth_violation <= self.tol


def osl_audit(field: VelocityField, sampler: Callable[[], tuple], tol: float = 1e-12) -> OSLAuditReport:
    """Empirical check of the growth and OSL bounds on sampled ``(t, x, y)`` triples.

    The OSL violation of a pair is ``-c1(t) - (b(x) - b(y)).(x - y) / |x - y|^2``,
    the growth violation is ``|b(x)| - c0(t) (1 + |x|)``; both are maximised.
    """
    t, x, y = sampler()
    t = np.asarray(t, dtype=float).reshape(-1)
    x = as_points(x, field.dim)
    y = as_points(y, field.dim)
    osl = np.full(t.size, -np.inf)
    growth = np.full(t.size, -np.inf)
    for tv in np.unique(t):
        sel = t == tv
        bx, by = field(tv, x[sel]), field(tv, y[sel])
        diff = x[sel] - y[sel]
        dist2 = np.sum(diff * diff, axis=1)
        ok = dist2 > 0
        quotient = np.full(dist2.shape, np.inf)
        quotient[ok] = np.sum((bx - by)[ok] * diff[ok], axis=1) / dist2[ok]
        osl[sel] = -field.constants.c1(tv) - quotient
        growth[sel] = np.linalg.norm(bx, axis=1) - field.constants.c0(tv) * (1 + np.linalg.norm(x[sel], axis=1))
    worst = int(np.argmax(osl))
    return OSLAuditReport(int(t.size), float(osl.max()), float(growth.max()), tol,
                          (float(t[worst]), x[worst].tolist(), y[worst].tolist()))


def pair_sampler(n: int, low: float, high: float, dim: int, seed: int, horizon: float,
                 near_fraction: float = 0.5) -> Callable[[], tuple]:
    """Uniform pairs in a box; a fraction are near-diagonal pairs at scales 1e-1..1e-6."""

    def sample():
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, horizon, n)
        x = rng.uniform(low, high, (n, dim))
        y = rng.uniform(low, high, (n, dim))
        n_near = int(near_fraction * n)
        half = n_near // 2
        scale = 10.0 ** rng.uniform(-6, -1, (n_near, 1))
        # pairs straddling the origin at small scales
        u = rng.uniform(0.1, 1.0, (half, dim)) * rng.choice([-1.0, 1.0], (half, dim))
        x[:half] = scale[:half] * u
        y[:half] = -scale[:half] * rng.uniform(0.1, 1.0, (half, 1)) * u
        # near-diagonal pairs anywhere in the box
        y[half:n_near] = x[half:n_near] + scale[half:] * rng.standard_normal((n_near - half, dim))
        return t, x, y

    return sample


# ---------------------------------------------------------------------------
# catalog

CATALOG = ("sgn", "powerlaw", "linear", "zero")


def _componentwise_envelope(t, x, p, side):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    smooth_part = np.sum(np.sign(x) * p)
    kink = np.sum(np.abs(p[x == 0]))
    return smooth_part - kink if side == "lower" else smooth_part + kink


def make_catalog_field(name: str, params: Sequence[float] = (), dim: int = 1,
                       horizon: float = 10.0) -> VelocityField:
    fld = _catalog_field(name, params, dim, horizon)
    fld.autonomous = True
    return fld


def _catalog_field(name: str, params: Sequence[float], dim: int, horizon: float) -> VelocityField:
    """Build a catalog field with exact oracles attached.

    ``sgn``: ``b = sgn x`` (componentwise), sticky at the origin.
    ``powerlaw [alpha, k]``: ``b = k sgn x |x|^alpha`` with ``0 < alpha < 1``;
    ``k`` defaults to ``1/(1 - alpha)`` so ``alpha = 1/2`` gives ``2 sgn x |x|^{1/2}``.
    ``linear [a]``: ``b = a x``, OSL rate ``max(0, -a)``.
    ``zero``: ``b = 0``.
    """
    params = tuple(float(p) for p in params)
    dim = int(dim)
    if dim < 1:
        raise FieldError("dimension must be positive")
    if not all(math.isfinite(p) for p in params):
        raise FieldError("parameters must be finite")
    root_d = math.sqrt(dim)

    if name == "sgn":
        if params:
            raise FieldError("sgn takes no parameters")

        def flow(t, s, pts):
            gap = s - t
            return np.sign(pts) * np.maximum(np.abs(pts) - gap, 0.0)

        def jac(t, s, pts):
            return np.prod(np.abs(pts) >= (s - t), axis=1).astype(float)

        return VelocityField(
            dim, lambda t, x: np.sign(x), OSLConstants.constant(root_d, 0.0, horizon),
            "discontinuous", name, params, kinks=lambda t: [[0.0]] * dim,
            flow_oracle=flow, jacobian_oracle=jac, envelope_oracle=_componentwise_envelope)

    if name == "powerlaw":
        if len(params) not in (1, 2):
            raise FieldError("powerlaw takes [alpha] or [alpha, k]")
        alpha = params[0]
        if not 0.0 < alpha < 1.0:
            raise FieldError("powerlaw needs 0 < alpha < 1")
        k = params[1] if len(params) == 2 else 1.0 / (1.0 - alpha)
        if k <= 0:
            raise FieldError("powerlaw coefficient must be positive")
        gamma = 1.0 - alpha

        def flow(t, s, pts):
            r = np.maximum(np.abs(pts) ** gamma - k * gamma * (s - t), 0.0)
            return np.sign(pts) * r ** (1.0 / gamma)

        def jac(t, s, pts):
            if s == t:
                return np.ones(pts.shape[0])
            absx = np.abs(pts)
            r = absx ** gamma - k * gamma * (s - t)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(r > 0, np.maximum(r, 0.0) ** (alpha / gamma) / np.where(absx > 0, absx, 1.0) ** alpha, 0.0)
            return np.prod(d, axis=1)

        def div(t, pts):
            with np.errstate(divide="ignore"):
                return np.sum(k * alpha * np.abs(pts) ** (alpha - 1.0), axis=1)

        return VelocityField(
            dim, lambda t, x: k * np.sign(x) * np.abs(x) ** alpha,
            OSLConstants.constant(k * root_d, 0.0, horizon), "continuous", name, (alpha, k),
            kinks=lambda t: [[0.0]] * dim, flow_oracle=flow, jacobian_oracle=jac, divergence=div)

    if name == "linear":
        if len(params) != 1:
            raise FieldError("linear takes [a]")
        a = params[0]
        return VelocityField(
            dim, lambda t, x: a * x, OSLConstants.constant(abs(a), max(0.0, -a), horizon),
            "smooth", name, params,
            flow_oracle=lambda t, s, pts: pts * math.exp(-a * (s - t)),
            jacobian_oracle=lambda t, s, pts: np.full(pts.shape[0], math.exp(-a * dim * (s - t))),
            divergence=lambda t, pts: np.full(pts.shape[0], a * dim),
            gradient=lambda t, pts: np.broadcast_to(a * np.eye(dim), (pts.shape[0], dim, dim)).copy())

    if name == "zero":
        if params:
            raise FieldError("zero takes no parameters")
        return VelocityField(
            dim, lambda t, x: np.zeros_like(x), OSLConstants.constant(0.0, 0.0, horizon),
            "smooth", name, params,
            flow_oracle=lambda t, s, pts: pts.copy(),
            jacobian_oracle=lambda t, s, pts: np.ones(pts.shape[0]),
            divergence=lambda t, pts: np.zeros(pts.shape[0]),
            gradient=lambda t, pts: np.zeros((pts.shape[0], dim, dim)))

    raise FieldError(f"unknown catalog field {name!r}; choose from {CATALOG}")


def shifted_field(field: VelocityField, shift: Callable[[float], np.ndarray], name: str = None) -> VelocityField:
    """Field ``b(t, z + shift(t))``: same OSL rate, kinks moved by ``-shift(t)``.

    Growth: ``|b(t, z + m)| <= c0 (1 + |m|)(1 + |z|)``, so ``c0`` is scaled by
    ``1 + sup |shift|`` where the caller supplies that bound via ``shift.bound``.
    """
    bound = float(getattr(shift, "bound", 0.0))
    c0 = field.constants.c0
    scaled = StepFunction(c0.breaks, tuple(v * (1.0 + bound) for v in c0.values))
    base_kinks = field.kinks

    def kinks(t):
        m = np.asarray(shift(t), dtype=float).reshape(field.dim)
        base = field.kink_positions(t) if base_kinks is not None else [[] for _ in range(field.dim)]
        return [np.asarray(k, dtype=float) - m[i] for i, k in enumerate(base)]

    grad = None
    if field.has_gradient:
        grad = lambda t, pts: field.gradient(t, pts + np.asarray(shift(t)).reshape(1, -1))
    return VelocityField(
        field.dim,
        lambda t, pts: field(t, pts + np.asarray(shift(t), dtype=float).reshape(1, -1)),
        OSLConstants(scaled, field.constants.c1), field.smoothness,
        name or field.name, field.params,
        kinks=kinks if base_kinks is not None else None, gradient=grad,
        divergence=(lambda t, pts: field.divergence(t, pts + np.asarray(shift(t)).reshape(1, -1)))
        if (field._divergence is not None or field.has_gradient) else None)


class TabulatedField(VelocityField):
    """Cubic Hermite table of an autonomous 1-D field on ``[low, high]``.

    Nodes are spaced ``spacing`` apart and carry the exact values and
    derivatives; points outside the window are evaluated exactly. The
    divergence is the derivative of the interpolant.
    """

    def __init__(self, base: VelocityField, low: float, high: float, spacing: float):
        if base.dim != 1 or not base.autonomous:
            raise FieldError("tabulation needs an autonomous one-dimensional field")
        n = int(math.ceil((high - low) / spacing)) + 1
        self.nodes = low + spacing * np.arange(n)
        self.h = float(self.nodes[1] - self.nodes[0])
        pts = self.nodes.reshape(-1, 1)
        self.values = base(0.0, pts)[:, 0]
        self.slopes = base.divergence(0.0, pts)
        super().__init__(1, self._evaluate, base.constants, "smooth", base.name, base.params,
                         divergence=self._derivative)
        self.base = base
        self.autonomous = True

    def _locate(self, x):
        u = (x - self.nodes[0]) / self.h
        i = np.clip(np.floor(u).astype(int), 0, self.nodes.size - 2)
        inside = (u >= 0) & (u <= self.nodes.size - 1)
        return i, u - i, inside

    def _evaluate(self, t: float, pts: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        i, s, inside = self._locate(x)
        v0, v1 = self.values[i], self.values[i + 1]
        m0, m1 = self.slopes[i] * self.h, self.slopes[i + 1] * self.h
        s2 = s * s
        s3 = s2 * s
        out = (2 * s3 - 3 * s2 + 1) * v0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * v1 + (s3 - s2) * m1
        if not np.all(inside):
            out = out.copy()
            out[~inside] = self.base(t, pts[~inside])[:, 0]
        return out.reshape(-1, 1)

    def _derivative(self, t: float, pts: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        i, s, inside = self._locate(x)
        v0, v1 = self.values[i], self.values[i + 1]
        m0, m1 = self.slopes[i] * self.h, self.slopes[i + 1] * self.h
        s2 = s * s
        out = ((6 * s2 - 6 * s) * v0 + (3 * s2 - 4 * s + 1) * m0 + (-6 * s2 + 6 * s) * v1 + (3 * s2 - 2 * s) * m1) / self.h
        if not np.all(inside):
            out = out.copy()
            out[~inside] = self.base.divergence(t, pts[~inside])
        return out

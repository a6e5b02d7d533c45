"""Coordinate-separable penalties ``I(beta) = sum_j J(|beta_j|)``.

Families: none, lasso, ridge, elastic net, SCAD, MCP and bridge.  Each
knows its value, the scalar proximal map ``argmin_b (z - b)^2 / 2 + eta J(|b|)``
(bridge with ``q < 1`` excepted) and the derivatives of ``J`` away from 0.

Conventions: ridge is ``J(t) = lam t^2 / 2``, i.e. the elastic net with
``theta = 0``; SCAD uses the continuous form of the middle branch,
``(a lam t - (t^2 + lam^2) / 2) / (a - 1)``.
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import _kernels_py as _ref
from ._backend import kernels as _kernels
from .exceptions import ContractError, UnsupportedOperationError

DEFAULT_A = {"scad": 3.7, "mcp": 3.0}


class PenaltyFamily(str, enum.Enum):
    NONE = "none"
    LASSO = "lasso"
    RIDGE = "ridge"
    ELASTIC_NET = "elastic_net"
    SCAD = "scad"
    MCP = "mcp"
    BRIDGE = "bridge"


@dataclass(frozen=True)
class PenaltySpec:
    family: PenaltyFamily = PenaltyFamily.NONE
    lam: float = 0.0
    a: float = None
    theta: float = 0.5
    q: float = 1.0

    def __post_init__(self):
        fam = PenaltyFamily(self.family)
        object.__setattr__(self, "family", fam)
        if not self.lam >= 0:
            raise ContractError(f"lambda must be nonnegative, got {self.lam}")
        if self.a is None:
            object.__setattr__(self, "a", DEFAULT_A.get(fam.value, 0.0))
        if fam is PenaltyFamily.SCAD and not self.a > 2:
            raise ContractError(f"SCAD requires a > 2, got {self.a}")
        if fam is PenaltyFamily.MCP and not self.a > 1:
            raise ContractError(f"MCP requires a > 1, got {self.a}")
        if fam is PenaltyFamily.ELASTIC_NET and not 0 <= self.theta <= 1:
            raise ContractError(f"elastic net requires theta in [0, 1], got {self.theta}")
        if fam is PenaltyFamily.BRIDGE and not 0 < self.q <= 1:
            raise ContractError(f"bridge requires q in (0, 1], got {self.q}")

    @classmethod
    def from_config(cls, cfg, lam=None):
        if isinstance(cfg, PenaltySpec):
            return cfg if lam is None else cfg.with_lambda(lam)
        if isinstance(cfg, str):
            cfg = {"family": cfg}
        cfg = dict(cfg)
        cfg.pop("lambda_rule", None)
        if "lambda" in cfg:
            cfg["lam"] = cfg.pop("lambda")
        if lam is not None:
            cfg["lam"] = lam
        return cls(**cfg)

    def to_config(self):
        out = {"family": self.family.value, "lambda": self.lam}
        if self.family in (PenaltyFamily.SCAD, PenaltyFamily.MCP):
            out["a"] = self.a
        elif self.family is PenaltyFamily.ELASTIC_NET:
            out["theta"] = self.theta
        elif self.family is PenaltyFamily.BRIDGE:
            out["q"] = self.q
        return out

    def with_lambda(self, lam):
        return PenaltySpec(self.family, lam, self.a, self.theta, self.q)

    @property
    def has_prox(self):
        return not (self.family is PenaltyFamily.BRIDGE and self.q < 1)

    @property
    def _enet_theta(self):
        # lasso, ridge and bridge(q=1) are elastic-net endpoints
        fam = self.family
        if fam is PenaltyFamily.LASSO or fam is PenaltyFamily.BRIDGE:
            return 1.0
        if fam is PenaltyFamily.RIDGE:
            return 0.0
        return self.theta

    @property
    def kernel_code(self):
        fam = self.family
        if fam is PenaltyFamily.NONE or self.lam == 0:
            return _ref.PEN_NONE
        if fam is PenaltyFamily.SCAD:
            return _ref.PEN_SCAD
        if fam is PenaltyFamily.MCP:
            return _ref.PEN_MCP
        return _ref.PEN_ENET

    def max_convex_step(self):
        """Largest ``eta`` for which the prox subproblem is strongly convex."""
        if self.lam == 0:
            return np.inf
        if self.family is PenaltyFamily.SCAD:
            return self.a - 1.0
        if self.family is PenaltyFamily.MCP:
            return self.a
        return np.inf


# -- J and its derivatives (t >= 0) ----------------------------------------


def J(t, spec):
    """Per-coordinate penalty ``J(t)`` for ``t = |beta_j| >= 0``."""
    t = np.abs(np.asarray(t, dtype=float))
    lam, a = spec.lam, spec.a
    fam = spec.family
    if fam is PenaltyFamily.NONE:
        return np.zeros_like(t)
    if fam is PenaltyFamily.SCAD:
        return np.where(
            t <= lam,
            lam * t,
            np.where(t <= a * lam, (a * lam * t - 0.5 * (t**2 + lam**2)) / (a - 1.0), 0.5 * lam**2 * (a + 1.0)),
        )
    if fam is PenaltyFamily.MCP:
        return np.where(t <= a * lam, lam * t - t**2 / (2.0 * a), 0.5 * a * lam**2)
    if fam is PenaltyFamily.BRIDGE:
        return lam * t**spec.q
    th = spec._enet_theta
    return lam * (th * t + 0.5 * (1.0 - th) * t**2)


def J_prime(t, spec):
    """``J'(t)`` for ``t > 0``."""
    t = np.abs(np.asarray(t, dtype=float))
    lam, a = spec.lam, spec.a
    fam = spec.family
    if fam is PenaltyFamily.NONE:
        return np.zeros_like(t)
    if fam is PenaltyFamily.SCAD:
        return np.where(t <= lam, lam, np.where(t <= a * lam, (a * lam - t) / (a - 1.0), 0.0))
    if fam is PenaltyFamily.MCP:
        return np.where(t <= a * lam, lam - t / a, 0.0)
    if fam is PenaltyFamily.BRIDGE:
        with np.errstate(divide="ignore"):
            return lam * spec.q * t ** (spec.q - 1.0)
    th = spec._enet_theta
    return lam * (th + (1.0 - th) * t)


def J_second(t, spec):
    """``J''(t)`` for ``t > 0``; at SCAD/MCP kinks the concave-branch value is used."""
    t = np.abs(np.asarray(t, dtype=float))
    lam, a = spec.lam, spec.a
    fam = spec.family
    if fam is PenaltyFamily.NONE or lam == 0:
        return np.zeros_like(t)
    if fam is PenaltyFamily.SCAD:
        return np.where((t >= lam) & (t <= a * lam), -1.0 / (a - 1.0), 0.0)
    if fam is PenaltyFamily.MCP:
        return np.where(t <= a * lam, -1.0 / a, 0.0)
    if fam is PenaltyFamily.BRIDGE:
        q = spec.q
        with np.errstate(divide="ignore", invalid="ignore"):
            return lam * q * (q - 1.0) * t ** (q - 2.0)
    return np.full_like(t, lam * (1.0 - spec._enet_theta))


# -- public operations ------------------------------------------------------


def penalty_value(beta, spec, mask=None):
    """``I(beta) = sum_j J(|beta_j|)``; coordinates with ``mask == 0`` are unpenalized."""
    vals = J(np.asarray(beta, dtype=float).ravel(), spec)
    if mask is not None:
        vals = vals[np.asarray(mask).ravel() != 0]
    return float(vals.sum())


def _prox_objective(b, z, eta, spec):
    return 0.5 * (z - b) ** 2 + eta * J(b, spec)


def _prox_search(z, eta, spec, step=1e-4):
    """Grid search plus golden-section polish on ``[0, |z|]``.

    The minimizer shares the sign of ``z`` and satisfies ``|b| <= |z|`` because
    ``J`` is nondecreasing in ``|b|``.
    """
    s, az = np.sign(z), abs(z)
    if az == 0:
        return 0.0
    grid = np.linspace(0.0, az, max(int(np.ceil(az / step)), 1) + 1)
    vals = _prox_objective(grid, az, eta, spec)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best_b, best_v = grid[i], vals[i]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda b: float(_prox_objective(b, az, eta, spec)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        if res.fun < best_v:
            best_b, best_v = float(res.x), float(res.fun)
    for cand in (0.0, az):
        v = float(_prox_objective(cand, az, eta, spec))
        if v < best_v or (cand == 0.0 and v <= best_v + 1e-15):
            best_b, best_v = cand, v
    return float(s * best_b)


def scalar_prox(z, eta, spec):
    """``argmin_b (z - b)^2 / 2 + eta * J(|b|)``, ties broken toward 0."""
    if not eta > 0:
        raise ContractError(f"eta must be positive, got {eta}")
    if not spec.has_prox:
        raise UnsupportedOperationError("bridge penalty with q < 1 has no proximal map")
    z = float(z)
    if eta < spec.max_convex_step():
        return float(_kernels.prox(np.array([z]), eta, spec.kernel_code, spec.lam, spec.a, spec._enet_theta)[0])
    return _prox_search(z, eta, spec)


def prox_vector(z, eta, spec, mask=None):
    """Elementwise prox of a vector; ``mask == 0`` entries pass through."""
    if not eta > 0:
        raise ContractError(f"eta must be positive, got {eta}")
    if not spec.has_prox:
        raise UnsupportedOperationError("bridge penalty with q < 1 has no proximal map")
    z = np.asarray(z, dtype=float)
    if eta < spec.max_convex_step():
        m = None if mask is None else np.asarray(mask, dtype=float)
        return _kernels.prox(z, eta, spec.kernel_code, spec.lam, spec.a, spec._enet_theta, m)
    out = np.array([_prox_search(zi, eta, spec) for zi in z])
    if mask is not None:
        out = np.where(np.asarray(mask) != 0, out, z)
    return out


def penalty_gradient_active(beta_active, spec):
    """Gradient of ``I`` at a point whose coordinates are all nonzero."""
    b = np.asarray(beta_active, dtype=float).ravel()
    if np.any(b == 0):
        raise ContractError("penalty_gradient_active requires every coordinate nonzero")
    return np.sign(b) * J_prime(np.abs(b), spec)


def penalty_curvature_bounds(spec, beta0_active, delta0, n_grid=2001):
    """Constants ``(a_n, b_n)`` of the local concavity bound on the penalty.

    ``a_n = max_l J'(|beta0_l|)`` and
    ``b_n = sup {|J''(|beta0_l| + tau delta0)| : tau in [-1, 1]}``.
    """
    b0 = np.abs(np.asarray(beta0_active, dtype=float).ravel())
    if b0.size == 0 or np.any(b0 == 0):
        raise ContractError("beta0_active must be nonempty with nonzero entries")
    if not delta0 > 0:
        raise ContractError("delta0 must be positive")
    a_n = float(np.max(J_prime(b0, spec)))
    tau = np.linspace(-1.0, 1.0, n_grid)
    pts = (b0[:, None] + tau[None, :] * delta0).ravel()
    # breakpoints inside the intervals are where piecewise J'' changes
    knots = []
    if spec.family is PenaltyFamily.SCAD:
        knots = [spec.lam, spec.a * spec.lam]
    elif spec.family is PenaltyFamily.MCP:
        knots = [spec.a * spec.lam]
    for k in knots:
        inside = np.abs(b0 - k) <= delta0
        if np.any(inside):
            pts = np.append(pts, k)
    pts = pts[pts > 0] if spec.family is not PenaltyFamily.BRIDGE else pts
    with np.errstate(invalid="ignore"):
        vals = np.abs(J_second(pts, spec))
    if spec.family is PenaltyFamily.BRIDGE and np.any(pts <= 0):
        return a_n, np.inf
    b_n = float(np.max(vals)) if vals.size else 0.0
    return a_n, b_n


def local_lipschitz_constant(spec, center, radius=0.1, n_pairs=2000, seed=0):
    """Empirical ``max |I(b1) - I(b2)| / (lam ||b1 - b2||_1)`` near ``center``."""
    if spec.lam == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    c = np.asarray(center, dtype=float)
    b1 = c + rng.uniform(-radius, radius, size=(n_pairs, c.size))
    b2 = c + rng.uniform(-radius, radius, size=(n_pairs, c.size))
    I1 = J(b1, spec).sum(axis=1)
    I2 = J(b2, spec).sum(axis=1)
    return float(np.max(np.abs(I1 - I2) / (spec.lam * np.abs(b1 - b2).sum(axis=1))))

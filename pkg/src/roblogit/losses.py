"""Bounded-deviance losses for logistic regression.

The loss of an observation ``(y, t)`` with linear predictor ``t = x'beta`` is

    phi(y, t) = rho(d(y, t)) + G(F(t)) + G(1 - F(t)),

where ``d`` is the logistic deviance, ``rho`` a bounded nondecreasing
function and ``G(s) = int_0^s psi(-log u) du`` the correction making the
population criterion Fisher-consistent.  Built-in ``rho`` families:

* ``exp``:        ``rho(t) = 1 - exp(-t)``
* ``divergence``: ``rho(t) = (1 + 1/c) (1 - exp(-c t))``
* ``deviance``:   ``rho(t) = t`` (non-robust baseline)

All functions accept scalars or numpy arrays and broadcast.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import _kernels_py as _ref
from ._backend import kernels as _kernels
from .exceptions import ContractError, DomainError

DEFAULT_DIVERGENCE_C = 0.5


class LossFamily(str, enum.Enum):
    EXP = "exp"
    DIVERGENCE = "divergence"
    DEVIANCE = "deviance"


@dataclass(frozen=True)
class LossSpec:
    """Which ``rho`` is used, plus the quadrature resolution for ``G``."""

    family: LossFamily = LossFamily.EXP
    c: float = 1.0
    quadrature_nodes: int = 200

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily(self.family))
        if self.family is LossFamily.DIVERGENCE and not self.c > 0:
            raise ContractError(f"divergence loss requires c > 0, got {self.c}")
        if self.family is not LossFamily.DIVERGENCE:
            object.__setattr__(self, "c", 1.0)
        if int(self.quadrature_nodes) < 1:
            raise ContractError("quadrature_nodes must be positive")

    @classmethod
    def exp(cls):
        return cls(LossFamily.EXP)

    @classmethod
    def divergence(cls, c=DEFAULT_DIVERGENCE_C):
        return cls(LossFamily.DIVERGENCE, c=float(c))

    @classmethod
    def deviance(cls):
        return cls(LossFamily.DEVIANCE)

    @classmethod
    def from_config(cls, cfg):
        """Build from a string (``"exp"``) or a mapping ``{"family": ..., "c": ...}``."""
        if isinstance(cfg, LossSpec):
            return cfg
        if isinstance(cfg, str):
            cfg = {"family": cfg}
        cfg = dict(cfg)
        family = LossFamily(cfg.pop("family"))
        if family is LossFamily.DIVERGENCE:
            cfg.setdefault("c", DEFAULT_DIVERGENCE_C)
        return cls(family, **cfg)

    def to_config(self):
        out = {"family": self.family.value}
        if self.family is LossFamily.DIVERGENCE:
            out["c"] = self.c
        return out

    @property
    def robust(self):
        """False for the classical deviance baseline."""
        return self.family is not LossFamily.DEVIANCE

    @property
    def scale(self):
        if self.family is LossFamily.DIVERGENCE:
            return 1.0 + 1.0 / self.c
        return 1.0

    @property
    def kernel_params(self):
        """``(code, c, scale)`` as understood by the kernel modules."""
        if self.family is LossFamily.DEVIANCE:
            return _ref.LOSS_DEVIANCE, 1.0, 1.0
        return _ref.LOSS_BOUNDED, self.c, self.scale

    @property
    def rho_sup(self):
        """``sup rho``; infinite for the deviance."""
        return math.inf if self.family is LossFamily.DEVIANCE else self.scale

    def rho(self, t):
        t = np.asarray(t, dtype=float)
        if self.family is LossFamily.DEVIANCE:
            return t
        return self.scale * -np.expm1(-self.c * t)

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        if self.family is LossFamily.DEVIANCE:
            return np.ones_like(t)
        return self.scale * self.c * np.exp(-self.c * t)

    def psi_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.family is LossFamily.DEVIANCE:
            return np.zeros_like(t)
        return -self.scale * self.c**2 * np.exp(-self.c * t)


def _check_binary(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("y must be 0 or 1")
    return y


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def link(t):
    """Logistic cdf ``F(t) = exp(t) / (1 + exp(t))``."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("link requires finite t")
    return _scalar(_ref.expit(t))


def deviance(y, t):
    """``d(y, t) = -y log F(t) - (1 - y) log(1 - F(t))``."""
    y = _check_binary(y)
    t = np.asarray(t, dtype=float)
    return _scalar(y * _ref.softplus(-t) + (1.0 - y) * _ref.softplus(t))


def _g_closed(s, loss):
    if loss.family is LossFamily.DEVIANCE:
        return s
    c = loss.c
    return loss.scale * c / (c + 1.0) * s ** (c + 1.0)


def _g_quad(s, loss):
    def integrand(u):
        if u <= 0.0:
            return float(loss.psi(math.inf)) if loss.family is LossFamily.DEVIANCE else 0.0
        return float(loss.psi(-math.log(u)))

    out = np.empty(np.shape(s))
    for idx, si in np.ndenumerate(np.asarray(s, dtype=float)):
        if si == 0.0:
            out[idx] = 0.0
        else:
            out[idx] = integrate.quad(
                integrand, 0.0, si, epsabs=1e-10, epsrel=1e-12, limit=loss.quadrature_nodes
            )[0]
    return out


def correction_G(s, loss, method="closed"):
    """Fisher-consistency correction ``G(s) = int_0^s psi(-log u) du``.

    ``method="closed"`` uses the analytic antiderivative (``s**2 / 2`` for the
    exp loss, ``s**(c+1)`` for the divergence family, ``s`` for the deviance);
    ``method="quad"`` integrates numerically with absolute tolerance 1e-10.
    """
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise DomainError("correction_G requires 0 <= s <= 1")
    if method == "closed":
        return _scalar(_g_closed(s, loss))
    if method == "quad":
        return _scalar(_g_quad(s, loss))
    raise ValueError(f"unknown method {method!r}")


def phi(y, t, loss):
    """Robust loss ``phi(y, t)``."""
    y = _check_binary(y)
    y, t = np.broadcast_arrays(y, np.asarray(t, dtype=float))
    return _scalar(_ref.loss_arrays(y, t, *loss.kernel_params)[0])


def nu(t, loss):
    """Weight function with ``Psi(y, t) = -(y - F(t)) nu(t)``; even in ``t``."""
    return _scalar(_ref.nu_array(t, *loss.kernel_params))


def nu_prime(t, loss):
    return _scalar(_ref.nu_prime_array(t, *loss.kernel_params))


def score_psi(y, t, loss):
    """``Psi(y, t) = d phi / dt``."""
    y = _check_binary(y)
    y, t = np.broadcast_arrays(y, np.asarray(t, dtype=float))
    return _scalar(_ref.loss_arrays(y, t, *loss.kernel_params)[1])


def hessian_chi(y, t, loss):
    """``chi(y, t) = d Psi / dt = F(1-F) nu - (y - F) nu'``."""
    y = _check_binary(y)
    y, t = np.broadcast_arrays(y, np.asarray(t, dtype=float))
    return _scalar(_ref.chi_array(y, t, *loss.kernel_params))


def m_function(pi, pi0, loss):
    """Population criterion ``M(pi, pi0)`` as a function of the fitted probability.

    ``M(pi, pi0) = pi0 rho(-log pi) + (1 - pi0) rho(-log(1 - pi)) + G(pi) + G(1 - pi)``,
    extended continuously to ``pi`` in {0, 1}.
    """
    pi = np.asarray(pi, dtype=float)
    pi0 = np.asarray(pi0, dtype=float)
    if np.any((pi < 0) | (pi > 1)) or np.any((pi0 < 0) | (pi0 > 1)):
        raise DomainError("m_function requires pi, pi0 in [0, 1]")
    pi, pi0 = np.broadcast_arrays(pi, pi0)
    G1 = _g_closed(1.0, loss)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(pi > 0, -np.log(np.where(pi > 0, pi, 1.0)), 0.0)
        hi = np.where(pi < 1, -np.log1p(-np.where(pi < 1, pi, 0.0)), 0.0)
        out = pi0 * loss.rho(lo) + (1 - pi0) * loss.rho(hi) + _g_closed(pi, loss) + _g_closed(1 - pi, loss)
        # boundary values: rho(-log 0) is rho_sup; 0 * inf counts as 0
        r = loss.rho_sup
        at0 = np.where(pi0 > 0, pi0 * r, 0.0) + G1
        at1 = np.where(pi0 < 1, (1 - pi0) * r, 0.0) + G1
    out = np.where(pi == 0, at0, np.where(pi == 1, at1, out))
    return _scalar(out)


def _check_dims(beta, data):
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != data.n_coef:
        raise ContractError(f"beta has {beta.shape[0]} entries, dataset expects {data.n_coef}")
    return beta


def empirical_loss(beta, data, loss):
    """``L_n(beta) = (1/n) sum_i phi(y_i, x_i'beta)``."""
    beta = _check_dims(beta, data)
    return _kernels.value_only(data.design, data.y, beta, *loss.kernel_params)


def empirical_gradient(beta, data, loss):
    """``(1/n) sum_i Psi(y_i, x_i'beta) x_i``."""
    beta = _check_dims(beta, data)
    return _kernels.value_grad(data.design, data.y, beta, *loss.kernel_params)[1]


def empirical_value_and_gradient(beta, data, loss):
    beta = _check_dims(beta, data)
    return _kernels.value_grad(data.design, data.y, beta, *loss.kernel_params)

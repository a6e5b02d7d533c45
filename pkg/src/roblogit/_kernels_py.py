"""Pure numpy kernels.

Reference implementation of the hot loops, used whenever the compiled
extension ``roblogit._kernels`` is not importable.  Both modules expose the
same functions with the same argument conventions:

loss code
    0 = bounded exponential family ``rho(t) = scale * (1 - exp(-c t))``
    (covers the exp loss with ``scale = c = 1`` and the divergence loss with
    ``scale = 1 + 1/c``), 1 = classical deviance ``rho(t) = t``.
penalty code
    0 = none, 1 = elastic net (``theta`` in [0, 1]; lasso and ridge are the
    endpoints), 2 = SCAD, 3 = MCP.
"""

import numpy as np

LOSS_BOUNDED = 0
LOSS_DEVIANCE = 1

PEN_NONE = 0
PEN_ENET = 1
PEN_SCAD = 2
PEN_MCP = 3


def softplus(t):
    """``log(1 + exp(t))`` without overflow."""
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def expit(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _powers(t, c):
    # F(t)^c and (1 - F(t))^c through the softplus identity
    return np.exp(-c * softplus(-t)), np.exp(-c * softplus(t))


def nu_array(t, code, c, scale):
    t = np.asarray(t, dtype=float)
    if code == LOSS_DEVIANCE:
        return np.ones_like(t)
    P = expit(t)
    Q = expit(-t)
    Pc, Qc = _powers(t, c)
    return scale * c * (Pc * Q + Qc * P)


def nu_prime_array(t, code, c, scale):
    t = np.asarray(t, dtype=float)
    if code == LOSS_DEVIANCE:
        return np.zeros_like(t)
    P = expit(t)
    Q = expit(-t)
    Pc, Qc = _powers(t, c)
    return scale * c * (Pc * Q * (c * Q - P) + Qc * P * (Q - c * P))


def loss_arrays(y, t, code, c, scale):
    """Per-observation loss values and scores ``(phi, Psi)``."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    P = expit(t)
    if code == LOSS_DEVIANCE:
        phi = y * softplus(-t) + (1.0 - y) * softplus(t) + 1.0
        return phi, P - y
    Q = expit(-t)
    Pc, Qc = _powers(t, c)
    g = scale * c / (c + 1.0)
    phi = scale * (1.0 - (y * Pc + (1.0 - y) * Qc)) + g * (Pc * P + Qc * Q)
    nu = scale * c * (Pc * Q + Qc * P)
    return phi, (P - y) * nu


def chi_array(y, t, code, c, scale):
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    P = expit(t)
    Q = expit(-t)
    nu = nu_array(t, code, c, scale)
    nup = nu_prime_array(t, code, c, scale)
    return P * Q * nu - (y - P) * nup


def value_grad(X, y, beta, code, c, scale):
    """Mean loss and its gradient for the design ``X``."""
    t = X @ beta
    phi, psi = loss_arrays(y, t, code, c, scale)
    n = X.shape[0]
    return float(phi.sum() / n), X.T @ psi / n


def value_only(X, y, beta, code, c, scale):
    phi, _ = loss_arrays(y, X @ beta, code, c, scale)
    return float(phi.sum() / X.shape[0])


def _soft(z, thr):
    return np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)


def prox(z, eta, code, lam, a, theta, mask=None):
    """Closed-form elementwise proximal map of ``eta * J``.

    Valid for the SCAD/MCP branches only when ``eta < a - 1`` (SCAD) or
    ``eta < a`` (MCP); callers are responsible for that bound.  Entries with
    ``mask == 0`` are returned unchanged.
    """
    z = np.asarray(z, dtype=float)
    if code == PEN_NONE:
        out = z.copy()
    elif code == PEN_ENET:
        out = _soft(z, eta * lam * theta) / (1.0 + eta * lam * (1.0 - theta))
    elif code == PEN_SCAD:
        az = np.abs(z)
        out = np.where(
            az <= lam * (1.0 + eta),
            _soft(z, eta * lam),
            np.where(
                az <= a * lam,
                ((a - 1.0) * z - np.sign(z) * a * lam * eta) / (a - 1.0 - eta),
                z,
            ),
        )
    elif code == PEN_MCP:
        out = np.where(np.abs(z) <= a * lam, _soft(z, eta * lam) / (1.0 - eta / a), z)
    else:
        raise ValueError(f"unknown penalty code {code}")
    if mask is not None:
        out = np.where(np.asarray(mask) != 0, out, z)
    return out

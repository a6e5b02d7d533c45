"""Plug-in estimates of the asymptotic objects of the penalized estimator.

Sample-average versions of

* ``H = E[x x']``
* ``B = E[Psi^2(y, x'beta) x x']``
* ``A_A = E[chi(y, x_A'b) x_A x_A']`` and ``B_A = E[Psi^2(y, x_A'b) x_A x_A']``
  on the active block,

the sandwich covariance ``A_A^{-1} B_A A_A^{-1} / n`` of the active
coefficients, the standardized Wald statistic and the prediction distance
``d^2(beta, beta0) = E[F(x'beta) - F(x'beta0)]^2``.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

from ._backend import kernels as _kernels
from .exceptions import ContractError, DegenerateDirectionError, IllConditionedError
from .losses import link

MAX_CONDITION = 1e10


@dataclass
class InferenceReport:
    H_hat: np.ndarray = None
    B_hat: np.ndarray = None
    A_active: np.ndarray = None
    B_active: np.ndarray = None
    n: int = 1
    active: list = field(default_factory=list)
    sandwich_cov_active: np.ndarray = None
    wald: dict = field(default_factory=dict)
    eigen_summary: dict = field(default_factory=dict)


def _weighted_gram(X, w):
    # (1/n) sum_i w_i x_i x_i', symmetrized
    G = (X * w[:, None]).T @ X / X.shape[0]
    return 0.5 * (G + G.T)


def _eig_range(M):
    ev = np.linalg.eigvalsh(M)
    return float(ev[0]), float(ev[-1])


def estimate_moment_matrices(data, beta, active, loss, directions=(), beta0_active=None):
    """Plug-in moment matrices at ``beta``.

    Parameters
    ----------
    data : Dataset
    beta : array, length ``data.n_coef``
    active : sequence of int
        Columns forming the active block.  May be empty, in which case only
        ``H_hat`` and ``B_hat`` are filled.
    loss : LossSpec
    directions : sequence of unit vectors, optional
        When given together with ``beta0_active``, the Wald statistic for each
        direction is stored in ``report.wald`` keyed by ``tuple(v)``.
    """
    X = data.design
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != X.shape[1]:
        raise ContractError(f"beta has {beta.shape[0]} entries, design has {X.shape[1]} columns")
    active = [int(j) for j in active]
    if any(j < 0 or j >= X.shape[1] for j in active):
        raise ContractError("active index out of range")
    code, c, s = loss.kernel_params
    n = data.n
    _, psi = _kernels.loss_arrays(data.y, X @ beta, code, c, s)
    report = InferenceReport(
        H_hat=_weighted_gram(X, np.ones(n)),
        B_hat=_weighted_gram(X, psi**2),
        n=n,
        active=active,
    )
    report.eigen_summary["H"] = _eig_range(report.H_hat)
    report.eigen_summary["B"] = _eig_range(report.B_hat)
    if active:
        XA = X[:, active]
        tA = XA @ beta[active]
        _, psiA = _kernels.loss_arrays(data.y, tA, code, c, s)
        chiA = _kernels.chi_array(data.y, tA, code, c, s)
        report.A_active = _weighted_gram(XA, chiA)
        report.B_active = _weighted_gram(XA, psiA**2)
        report.eigen_summary["A_active"] = _eig_range(report.A_active)
        report.eigen_summary["B_active"] = _eig_range(report.B_active)
        try:
            report.sandwich_cov_active = sandwich_covariance(report)
        except IllConditionedError:
            report.sandwich_cov_active = None
        if beta0_active is not None:
            for v in directions:
                report.wald[tuple(float(x) for x in v)] = wald_statistic(
                    v, report, beta[active], beta0_active, n
                )
    return report


def sandwich_covariance(report):
    """``A^{-1} B A^{-1} / n`` for the active block, symmetrized."""
    A, B = report.A_active, report.B_active
    if A is None or B is None:
        raise ContractError("report has no active-block matrices")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(f"A_active is ill-conditioned (cond={cond:.3g})", cond)
    Ainv_B = linalg.solve(A, B, assume_a="sym")
    S = linalg.solve(A, Ainv_B.T, assume_a="sym") / report.n
    return 0.5 * (S + S.T)


def wald_statistic(v, report, beta_hat_active, beta0_active, n):
    """``sqrt(n) v'A (beta_hat - beta0) / sqrt(v'B v)`` on the active block."""
    v = np.asarray(v, dtype=float).ravel()
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ContractError("direction v must have unit norm")
    A, B = report.A_active, report.B_active
    if A is None or B is None:
        raise ContractError("report has no active-block matrices")
    if v.size != A.shape[0]:
        raise ContractError(f"direction has {v.size} entries, active block has {A.shape[0]}")
    t2 = float(v @ B @ v)
    if t2 <= 1e-14:
        raise DegenerateDirectionError(f"v'B v = {t2:.3g} is numerically zero")
    diff = np.asarray(beta_hat_active, dtype=float) - np.asarray(beta0_active, dtype=float)
    return float(np.sqrt(n) * (v @ A @ diff) / np.sqrt(t2))


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


def prediction_distance(beta, beta0, design_sampler, mc_draws, seed=0, chunk=100_000):
    """Monte Carlo estimate of ``E[F(x'beta) - F(x'beta0)]^2`` over fresh designs.

    ``design_sampler(rng, m)`` must return an ``m x p`` array of design rows.
    Draws are taken in chunks, each from its own seeded stream, and reduced in
    order, so the result depends only on ``seed`` (an int or a sequence of
    ints).
    """
    mc_draws = int(mc_draws)
    if mc_draws < 1:
        raise ContractError("mc_draws must be at least 1")
    beta = np.asarray(beta, dtype=float).ravel()
    beta0 = np.asarray(beta0, dtype=float).ravel()
    entropy = [int(s) for s in np.atleast_1d(seed)]
    total = 0.0
    total_sq = 0.0
    done = 0
    part = 0
    while done < mc_draws:
        m = min(chunk, mc_draws - done)
        rng = np.random.default_rng([*entropy, part])
        X = np.asarray(design_sampler(rng, m), dtype=float)
        sq = (link(X @ beta) - link(X @ beta0)) ** 2
        total += float(sq.sum())
        total_sq += float((sq**2).sum())
        done += m
        part += 1
    mean = total / mc_draws
    var = max(total_sq / mc_draws - mean**2, 0.0)
    se = float(np.sqrt(var / mc_draws)) if mc_draws > 1 else float("nan")
    return MonteCarloEstimate(mean, se)

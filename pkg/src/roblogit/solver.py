"""Proximal-gradient solver for the penalized robust logistic objective.

Minimizes ``L_n(beta) + I_lam(beta)`` over ``R^p``, or over the L1 ball
``||beta||_1 <= R`` when a restriction radius is configured.  The loss may be
non-convex and so may the penalty (SCAD, MCP); the solver returns a
stationary point, reached by monotone backtracking from one or several
deterministic starts.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from ._backend import kernels as _kernels
from .dataset import Dataset
from .exceptions import ContractError, DivergedError, RobLogitError, UnsupportedOperationError
from .losses import LossSpec
from .penalties import J_prime, J_second, PenaltyFamily, PenaltySpec, penalty_value, prox_vector

__all__ = [
    "Dataset",
    "FitConfig",
    "FitResult",
    "PathFitError",
    "fit",
    "lambda_path",
    "project_l1_ball",
    "select_lambda_bic",
    "bic",
]

SUFFICIENT_DECREASE = 1e-4
STEP_CLAMP = 0.99  # fraction of the strong-convexity bound for SCAD/MCP steps
MIN_STEP = 1e-20
POLISH_ITERS = 20
POLISH_SLACK = 1e-13  # the exact decrease is often below the rounding of an n-term sum


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 5000
    tol: float = 1e-8
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    restriction_radius: float = None
    n_starts: int = 1
    seed: int = 0
    intercept_penalized: bool = False
    beta_init: tuple = None
    threads: int = 1
    polish: bool = True

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ContractError("max_iters must be positive")
        if not self.tol > 0:
            raise ContractError("tol must be positive")
        if not self.step_init > 0:
            raise ContractError("step_init must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ContractError("backtrack_factor must lie in (0, 1)")
        if self.restriction_radius is not None and not self.restriction_radius >= 0:
            raise ContractError("restriction_radius must be nonnegative")
        if int(self.n_starts) < 1:
            raise ContractError("n_starts must be positive")
        if int(self.threads) < 1:
            raise ContractError("threads must be positive")
        if self.beta_init is not None:
            object.__setattr__(self, "beta_init", tuple(float(b) for b in np.ravel(self.beta_init)))

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg or {})
        if "R" in cfg:
            cfg["restriction_radius"] = cfg.pop("R")
        return cls(**cfg)


@dataclass
class FitResult:
    beta_hat: np.ndarray
    intercept: float
    active_set: list
    objective: float
    iterations: int
    converged: bool
    objective_trace: list = field(repr=False)
    stationarity_residual: float
    lam: float = 0.0
    step: float = 1.0
    start_index: int = 0

    @property
    def coef(self):
        """Full coefficient vector as used by the design (intercept last)."""
        if self.intercept is None:
            return self.beta_hat
        return np.append(self.beta_hat, self.intercept)

    def to_record(self):
        return {
            "lambda": self.lam,
            "coefficients": [float(b) for b in self.beta_hat],
            "intercept": None if self.intercept is None else float(self.intercept),
            "active_set": [int(j) for j in self.active_set],
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "stationarity_residual": float(self.stationarity_residual),
        }


def project_l1_ball(v, R):
    """Euclidean projection of ``v`` onto ``{b : ||b||_1 <= R}`` (sort-based, exact)."""
    v = np.asarray(v, dtype=float)
    if R < 0:
        raise ContractError("R must be nonnegative")
    a = np.abs(v)
    if a.sum() <= R:
        return v.copy()
    if R == 0:
        return np.zeros_like(v)
    u = np.sort(a.ravel())[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    idx = np.nonzero(u - (css - R) / j > 0)[0]
    rho = idx[-1] if idx.size else 0  # tiny R can round the first test to 0
    theta = (css[rho] - R) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def _penalty_mask(data, cfg):
    mask = np.ones(data.n_coef)
    if data.intercept and not cfg.intercept_penalized:
        mask[-1] = 0.0
    return mask


class _Problem:
    """Objective pieces bound to one dataset, loss, penalty and mask."""

    def __init__(self, data, loss, pen, mask, radius):
        self.X = data.design
        self.y = data.y
        self.kp = loss.kernel_params
        self.pen = pen
        self.mask = mask
        self.radius = radius
        self.masked = not np.all(mask == 1)
        self.eta_max = STEP_CLAMP * pen.max_convex_step()

    def smooth(self, beta):
        return _kernels.value_grad(self.X, self.y, beta, *self.kp)

    def penalty(self, beta):
        return penalty_value(beta, self.pen, self.mask if self.masked else None)

    def prox(self, z, eta):
        out = prox_vector(z, eta, self.pen, self.mask if self.masked else None)
        if self.radius is not None:
            out = self.project(out)
        return out

    def l1(self, beta):
        return float(np.abs(beta[self.mask != 0]).sum())

    def project(self, beta):
        if not self.masked:
            return project_l1_ball(beta, self.radius)
        out = beta.copy()
        sel = self.mask != 0
        out[sel] = project_l1_ball(beta[sel], self.radius)
        return out


def _run(problem, beta, cfg):
    """Monotone proximal gradient from ``beta``; returns a partial FitResult dict."""
    if problem.radius is not None:
        beta = problem.project(beta)
    f, g = problem.smooth(beta)
    F = f + problem.penalty(beta)
    if not math.isfinite(F):
        raise DivergedError("non-finite objective at the starting point", [F])
    trace = [F]
    step = min(cfg.step_init, problem.eta_max)
    converged = False
    residual = math.inf
    it = 0
    tol = cfg.tol
    grow = True
    for it in range(1, cfg.max_iters + 1):
        if grow:
            step = min(step / cfg.backtrack_factor, problem.eta_max)
        grow = True
        nb = 1.0 + math.sqrt(float(beta @ beta))
        while True:
            cand = problem.prox(beta - step * g, step)
            d = cand - beta
            dd = float(d @ d)
            fc, gc = problem.smooth(cand)
            Fc = fc + problem.penalty(cand)
            if not math.isfinite(Fc):
                raise DivergedError(f"non-finite objective at iteration {it}", trace)
            residual = math.sqrt(dd)
            if residual <= tol * nb and abs(F - Fc) <= tol * max(1.0, abs(F)):
                converged = True
                break
            if Fc <= F - SUFFICIENT_DECREASE / (2.0 * step) * dd:
                break
            step *= cfg.backtrack_factor
            grow = False
            if step < MIN_STEP:
                break
        if converged or step < MIN_STEP:
            break
        beta, f, g, F = cand, fc, gc, Fc
        trace.append(F)
    return {
        "beta": beta,
        "objective_trace": trace,
        "iterations": it,
        "converged": converged,
        "residual": residual,
        "step": step,
    }


def _regions(b, pen):
    # signed index of the smooth piece of the penalty each coordinate sits on
    t = np.abs(b)
    if pen.family is PenaltyFamily.SCAD:
        return np.sign(b) * (1 + (t > pen.lam) + (t > pen.a * pen.lam))
    if pen.family is PenaltyFamily.MCP:
        return np.sign(b) * (1 + (t > pen.a * pen.lam))
    return np.sign(b)


def _polish(problem, run):
    """Newton refinement of a converged iterate on its support.

    Proximal gradient stops once the prox residual is below tolerance, which
    can leave the iterate ``cond * tol`` away from the stationary point.
    When the objective is smooth around the iterate on its support (no sign
    or penalty-piece change) a few Newton steps on that support land on the
    stationary point to rounding accuracy.  The result is kept only if the
    full prox residual does not grow and the objective does not increase by
    more than summation rounding (``POLISH_SLACK`` relative).
    """
    beta, step = run["beta"], run["step"]
    if not run["converged"] or (problem.radius is not None and problem.l1(beta) >= problem.radius):
        return run
    S = np.flatnonzero(beta)
    if S.size == 0:
        return run
    pen = problem.pen
    XS = problem.X[:, S]
    wS = problem.mask[S]
    regions = _regions(beta[S], pen)
    f, g = problem.smooth(beta)
    F = run["objective_trace"][-1]
    res0 = float(np.linalg.norm(problem.prox(beta - step * g, step) - beta))
    b = beta.copy()
    for _ in range(POLISH_ITERS):
        bs = b[S]
        chi = _kernels.chi_array(problem.y, problem.X @ b, *problem.kp)
        grad = g[S] + wS * np.sign(bs) * J_prime(bs, pen)
        H = (XS * chi[:, None]).T @ XS / XS.shape[0] + np.diag(wS * J_second(bs, pen))
        try:
            d = linalg.cho_solve(linalg.cho_factor(H), grad)
        except linalg.LinAlgError:
            return run
        b[S] = bs - d
        if not np.array_equal(_regions(b[S], pen), regions):
            return run
        f, g = problem.smooth(b)
        if np.linalg.norm(d) <= 1e-15 * (1.0 + np.linalg.norm(b)):
            break
    if problem.radius is not None and problem.l1(b) >= problem.radius:
        return run
    Fb = f + problem.penalty(b)
    res = float(np.linalg.norm(problem.prox(b - step * g, step) - b))
    if not (Fb <= F + POLISH_SLACK * max(1.0, abs(F)) and res <= res0):
        return run
    out = dict(run)
    out["beta"] = b
    out["residual"] = res
    if Fb < F:
        out["objective_trace"] = run["objective_trace"] + [Fb]
    return out


def _starts(data, cfg):
    p = data.n_coef
    base = np.zeros(p) if cfg.beta_init is None else np.asarray(cfg.beta_init, dtype=float)
    if base.shape != (p,):
        raise ContractError(f"beta_init has {base.size} entries, expected {p}")
    starts = [base]
    # antithetic pairs u, -u on the sphere of radius 1/sqrt(p)
    for i in range(1, cfg.n_starts):
        if i % 2 == 0:
            starts.append(-starts[-1])
            continue
        rng = np.random.default_rng([cfg.seed, i])
        u = rng.standard_normal(p)
        starts.append(u / np.linalg.norm(u) / math.sqrt(p))
    return starts


def fit(data, loss, pen, cfg=None):
    """Fit the penalized robust estimator.

    Parameters
    ----------
    data : Dataset
    loss : LossSpec
    pen : PenaltySpec
        Any family with a proximal map (bridge with ``q < 1`` is rejected).
    cfg : FitConfig, optional

    Returns
    -------
    FitResult
        With ``n_starts > 1`` the lowest objective wins, ties going to the
        earlier start.
    """
    cfg = cfg or FitConfig()
    if not pen.has_prox:
        raise UnsupportedOperationError("the solver needs a penalty with a proximal map")
    mask = _penalty_mask(data, cfg)
    problem = _Problem(data, loss, pen, mask, cfg.restriction_radius)
    starts = _starts(data, cfg)

    def one(b):
        run = _run(problem, b, cfg)
        return _polish(problem, run) if cfg.polish else run

    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            runs = list(ex.map(one, starts))
    else:
        runs = [one(b) for b in starts]
    best = min(range(len(runs)), key=lambda i: (runs[i]["objective_trace"][-1], i))
    run = runs[best]
    beta = run["beta"]
    objective = _objective(beta, data, loss, pen, mask)
    if data.intercept:
        beta_hat, intercept = beta[:-1].copy(), float(beta[-1])
    else:
        beta_hat, intercept = beta.copy(), None
    return FitResult(
        beta_hat=beta_hat,
        intercept=intercept,
        active_set=[int(j) for j in np.flatnonzero(beta_hat)],
        objective=objective,
        iterations=run["iterations"],
        converged=run["converged"],
        objective_trace=run["objective_trace"],
        stationarity_residual=run["residual"],
        lam=pen.lam,
        step=run["step"],
        start_index=best,
    )


def _objective(beta, data, loss, pen, mask):
    from .losses import empirical_loss

    m = None if np.all(mask == 1) else mask
    return empirical_loss(beta, data, loss) + penalty_value(beta, pen, m)


class PathFitError(RobLogitError):
    """A fit along a regularization path failed; ``index`` is the lambda position."""

    def __init__(self, index, lam, cause):
        super().__init__(f"fit failed at lambda index {index} (lambda={lam}): {cause}")
        self.index = index
        self.lam = lam


def lambda_path(data, loss, pen, lambdas, cfg=None):
    """Fit a strictly descending sequence of penalty levels with warm starts."""
    cfg = cfg or FitConfig()
    lambdas = [float(l) for l in lambdas]
    if not lambdas:
        raise ContractError("lambdas must be nonempty")
    if any(l <= 0 for l in lambdas):
        raise ContractError("lambdas must be positive")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ContractError("lambdas must be strictly descending")
    results = []
    run_cfg = cfg
    for i, lam in enumerate(lambdas):
        try:
            res = fit(data, loss, pen.with_lambda(lam), run_cfg)
        except RobLogitError as exc:
            raise PathFitError(i, lam, exc) from exc
        results.append(res)
        run_cfg = replace(cfg, beta_init=tuple(res.coef), n_starts=1)
    return results


def bic(result, data, loss):
    """``2 n L_n(beta_hat) + |active set| log n``."""
    from .losses import empirical_loss

    return 2 * data.n * empirical_loss(result.coef, data, loss) + len(result.active_set) * math.log(data.n)


def select_lambda_bic(path_results, data, loss):
    """Index of the BIC-minimizing fit; ties go to the larger lambda (earlier index)."""
    if not path_results:
        raise ContractError("path_results must be nonempty")
    scores = [bic(r, data, loss) for r in path_results]
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best] - 1e-12 * max(1.0, abs(scores[best])):
            best = i
    return best

"""Self-contained GLM fitting: logistic via IRLS and Gaussian-linear via OLS.

These two families realize every parametric working model in the package.
The fitting contract is deterministic: fixed tolerance on the score, fixed
iteration cap, step-halving when a Newton step lowers the likelihood, and a
tiny ridge jitter when the weighted Gram matrix is near singular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVariance, DimensionMismatch, RankDeficient

SCORE_TOL = 1e-8
MAX_ITER = 100
RIDGE_JITTER = 1e-8
_LP_CLIP = 36.0  # keeps expit strictly inside (0, 1) in double precision


def expit(t: np.ndarray | float) -> np.ndarray | float:
    """Numerically safe inverse logit."""
    t = np.clip(t, -_LP_CLIP, _LP_CLIP)
    return 1.0 / (1.0 + np.exp(-t))


def logit(p: np.ndarray | float) -> np.ndarray | float:
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GlmFit:
    """Fitted coefficients plus convergence diagnostics.

    coefficients are ordered as the design columns (intercept first by
    convention of the callers). residual_variance is RSS/(n-p); it is only
    meaningful for the gaussian family.
    """

    family: str  # "logistic" | "gaussian"
    coefficients: np.ndarray
    residual_variance: float = 0.0
    converged: bool = True
    iterations: int = 0
    separated: bool = False
    variance_degenerate: bool = False
    loglik_trace: tuple = field(default_factory=tuple, repr=False)

    def __post_init__(self):
        self.coefficients.setflags(write=False)


def _check_rank(design: np.ndarray) -> None:
    if design.ndim != 2:
        raise DimensionMismatch("design must be a 2-D matrix")
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficient(
            f"design has rank < {design.shape[1]} (collinear columns)"
        )


def _bernoulli_loglik(y: np.ndarray, lp: np.ndarray) -> float:
    # log L = sum y*lp - log(1 + exp(lp)), written overflow-safe
    return float(np.sum(y * lp - np.logaddexp(0.0, lp)))


def fit_logistic(
    design: np.ndarray,
    y: np.ndarray,
    offset: np.ndarray | None = None,
    tol: float = SCORE_TOL,
    max_iter: int = MAX_ITER,
) -> GlmFit:
    """Maximum-likelihood logistic regression via iteratively reweighted LS.

    Converges when the largest score component drops below ``tol``.
    Separated data is not an error: the fit comes back with
    ``separated=True`` (the score can vanish numerically at a saturated
    solution, so ``converged`` may still read True), and its predictions
    are clamped away from 0 and 1.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_rank(design)
    n, p = design.shape
    if len(y) != n:
        raise DimensionMismatch("y length does not match design")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    beta = np.zeros(p)
    lp = design @ beta + off
    loglik = _bernoulli_loglik(y, lp)
    trace = [loglik]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = expit(lp)
        score = design.T @ (y - prob)
        if np.max(np.abs(score)) < tol:
            converged = True
            it -= 1  # this pass only checked the score
            break
        w = prob * (1.0 - prob)
        gram = design.T @ (design * w[:, None])
        # jitter only when needed, so well-posed fits stay exact
        try:
            step = np.linalg.solve(gram, score)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(gram + RIDGE_JITTER * np.eye(p), score)
        if not np.isfinite(step).all():
            step = np.linalg.solve(gram + RIDGE_JITTER * np.eye(p), score)

        # step-halving: accept the first step that does not lower the loglik
        scale = 1.0
        for _ in range(31):
            cand = beta + scale * step
            cand_lp = design @ cand + off
            cand_ll = _bernoulli_loglik(y, cand_lp)
            if cand_ll >= loglik - 1e-12:
                break
            scale *= 0.5
        beta, lp, loglik = cand, cand_lp, cand_ll
        trace.append(loglik)
    else:
        it = max_iter

    # pinned fitted probabilities witness a perfectly classifying direction,
    # which is separation whether or not the score test tripped first (the
    # score also vanishes numerically as the coefficients diverge)
    prob = expit(lp)
    ones_pinned = not np.any(y == 1) or float(np.min(prob[y == 1])) > 1 - 1e-6
    zeros_pinned = not np.any(y == 0) or float(np.max(prob[y == 0])) < 1e-6
    separated = bool(ones_pinned and zeros_pinned)

    return GlmFit(
        family="logistic",
        coefficients=beta,
        converged=converged,
        iterations=it,
        separated=separated,
        loglik_trace=tuple(trace),
    )


def fit_linear(design: np.ndarray, y: np.ndarray) -> GlmFit:
    """Ordinary least squares with residual variance RSS/(n-p)."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_rank(design)
    n, p = design.shape
    if len(y) != n:
        raise DimensionMismatch("y length does not match design")

    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    dof = max(n - p, 1)
    sigma2 = float(resid @ resid) / dof
    return GlmFit(
        family="gaussian",
        coefficients=beta,
        residual_variance=sigma2,
        converged=True,
        iterations=1,
        variance_degenerate=bool(sigma2 <= 1e-12),
    )


def predict_mean(fit: GlmFit, x: np.ndarray) -> np.ndarray | float:
    """Mean response at one row or a matrix of rows.

    Logistic fits return probabilities strictly inside (0, 1); gaussian fits
    return the linear predictor.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    mat = x[None, :] if single else x
    if mat.shape[1] != len(fit.coefficients):
        raise DimensionMismatch(
            f"row width {mat.shape[1]} != {len(fit.coefficients)} coefficients"
        )
    lp = mat @ fit.coefficients
    out = expit(lp) if fit.family == "logistic" else lp
    return float(out[0]) if single else out


def gaussian_density(fit: GlmFit, m: np.ndarray | float, x: np.ndarray) -> np.ndarray | float:
    """Normal density of m around the fitted conditional mean."""
    if fit.family != "gaussian":
        raise DimensionMismatch("gaussian_density needs a gaussian fit")
    if fit.residual_variance <= 0 or fit.variance_degenerate:
        raise DegenerateVariance("zero residual variance cannot act as a density")
    mean = predict_mean(fit, x)
    var = fit.residual_variance
    m = np.asarray(m, dtype=float)
    dens = np.exp(-0.5 * (m - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)
    return float(dens) if np.ndim(dens) == 0 else dens

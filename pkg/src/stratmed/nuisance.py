"""The four nuisance functions behind every estimator.

A :class:`NuisanceBundle` packages callable predictors for

* treatment assignment probability, P(Z=z | X),
* event probability, P(D=d | Z=z, X),
* mediator pmf or density, f(M=m | Z=z, D=d, X),
* outcome mean, E[Y | Z=z, D=d, M=m, X],

together with the feature matrices each model was given, so estimators can
evaluate any nuisance at any subset of rows. Bundles also own the positivity
clipping policy for denominator uses and a diagnostics counter dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import glm
from .core import CrossWorldTarget, Dataset, MediatorKind, Monotonicity, Stratum
from .errors import (
    EmptyCell,
    ExtremePropensity,
    FitError,
    NegativeScore,
    QuadratureOverflow,
)

DEFAULT_CLIP = 1e-3
QUADRATURE_NODES = 32

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(QUADRATURE_NODES)
_GH_NORM = 1.0 / np.sqrt(np.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Feature matrices handed to each working model.

    The scenario switch of the simulation study is exactly this: a model is
    misspecified by giving it transformed covariates while the data stay
    fixed. All four default to the same matrix.
    """

    pi: np.ndarray
    p: np.ndarray
    r: np.ndarray
    mu: np.ndarray

    @classmethod
    def shared(cls, x: np.ndarray) -> "ModelSpec":
        return cls(pi=x, p=x, r=x, mu=x)

    def take(self, rows: np.ndarray) -> "ModelSpec":
        return ModelSpec(
            pi=self.pi[rows], p=self.p[rows], r=self.r[rows], mu=self.mu[rows]
        )

    def widths(self) -> dict[str, int]:
        return {
            "pi": self.pi.shape[1],
            "p": self.p.shape[1],
            "r": self.r.shape[1],
            "mu": self.mu.shape[1],
        }


def _with_intercept(*blocks: np.ndarray) -> np.ndarray:
    cols = [np.ones((blocks[0].shape[0], 1))]
    for b in blocks:
        cols.append(b if b.ndim == 2 else b[:, None])
    return np.hstack(cols)


def _tag(nuisance: str, err: FitError) -> FitError:
    return type(err)(f"{nuisance} model: {err}")


# ---------------------------------------------------------------- components


class TreatmentComponent:
    """P(Z=1 | features) from a logistic fit."""

    def __init__(self, fit: glm.GlmFit):
        self.fit = fit

    def prob(self, z: int, x: np.ndarray) -> np.ndarray:
        p1 = glm.predict_mean(self.fit, _with_intercept(x))
        return p1 if z == 1 else 1.0 - p1


class EventComponent:
    """P(D=1 | Z=z, features); strong mode pins the z=0 arm at zero."""

    def __init__(self, fit: glm.GlmFit, monotonicity: Monotonicity):
        self.fit = fit
        self.monotonicity = monotonicity

    def prob(self, z: int, d: int, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.monotonicity == Monotonicity.STRONG:
            if z == 0:
                # no event without assignment, exactly
                return np.full(n, float(1 - d))
            p1 = glm.predict_mean(self.fit, _with_intercept(x))
        else:
            zcol = np.full(n, float(z))
            p1 = glm.predict_mean(self.fit, _with_intercept(zcol, x))
        return p1 if d == 1 else 1.0 - p1


class DiscreteMediatorComponent:
    """pmf over levels 0..m_max built from sequential one-vs-rest splits.

    Split j models P(M=j | M <= j); the chain composes into a full pmf and
    collapses to a single logistic fit when the mediator is binary.
    """

    def __init__(self, split_fits: Sequence[glm.GlmFit], m_max: int):
        self.split_fits = list(split_fits)  # index j-1 holds the level-j split
        self.m_max = m_max

    def _split_prob(self, j: int, z: int, d: int, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        design = _with_intercept(np.full(n, float(z)), np.full(n, float(d)), x)
        return glm.predict_mean(self.split_fits[j - 1], design)

    def pmf(self, z: int, d: int, m: int, x: np.ndarray) -> np.ndarray:
        out = np.ones(x.shape[0])
        if m >= 1:
            out = out * self._split_prob(m, z, d, x)
        for j in range(max(m, 0) + 1, self.m_max + 1):
            out = out * (1.0 - self._split_prob(j, z, d, x))
        return out


class ContinuousMediatorComponent:
    """Gaussian conditional density with a linear mean."""

    def __init__(self, fit: glm.GlmFit):
        self.fit = fit

    def _design(self, z: int, d: int, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return _with_intercept(np.full(n, float(z)), np.full(n, float(d)), x)

    def density(self, z: int, d: int, m: np.ndarray, x: np.ndarray) -> np.ndarray:
        return glm.gaussian_density(self.fit, m, self._design(z, d, x))

    def mean_sd(self, z: int, d: int, x: np.ndarray) -> tuple[np.ndarray, float]:
        mean = glm.predict_mean(self.fit, self._design(z, d, x))
        return mean, float(np.sqrt(self.fit.residual_variance))


class OutcomeComponent:
    """E[Y | Z=z, D=d, M=m, features], linear or logistic by outcome type."""

    def __init__(self, fit: glm.GlmFit):
        self.fit = fit

    def mean(self, z: int, d: int, m: np.ndarray | float, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        mcol = np.full(n, float(m)) if np.ndim(m) == 0 else np.asarray(m, dtype=float)
        design = _with_intercept(np.full(n, float(z)), np.full(n, float(d)), mcol, x)
        return glm.predict_mean(self.fit, design)


# -------------------------------------------------------------------- bundle


@dataclass
class NuisanceBundle:
    """Four fitted nuisance components bound to their evaluation features."""

    treatment: TreatmentComponent
    event: EventComponent
    mediator: DiscreteMediatorComponent | ContinuousMediatorComponent
    outcome: OutcomeComponent
    spec: ModelSpec
    mediator_kind: MediatorKind
    monotonicity: Monotonicity
    clip: float = DEFAULT_CLIP
    provenance: str = "parametric"
    diagnostics: dict = field(default_factory=dict)

    # row selection helpers -------------------------------------------------
    def _rows(self, mat: np.ndarray, rows) -> np.ndarray:
        return mat if rows is None else mat[rows]

    def pi(self, z: int, rows=None) -> np.ndarray:
        return np.asarray(self.treatment.prob(z, self._rows(self.spec.pi, rows)))

    def p(self, z: int, d: int, rows=None) -> np.ndarray:
        return np.asarray(self.event.prob(z, d, self._rows(self.spec.p, rows)))

    def r(self, z: int, d: int, m, rows=None) -> np.ndarray:
        x = self._rows(self.spec.r, rows)
        if self.mediator_kind.is_discrete:
            m_arr = np.asarray(m)
            if m_arr.ndim == 0:
                return np.asarray(self.mediator.pmf(z, d, int(m_arr), x))
            # per-row levels: evaluate each level once, then gather
            out = np.empty(x.shape[0])
            for level in self.mediator_kind.levels:
                mask = m_arr == level
                if np.any(mask):
                    out[mask] = self.mediator.pmf(z, d, level, x[mask])
            return out
        return np.asarray(self.mediator.density(z, d, np.asarray(m, dtype=float), x))

    def mu(self, z: int, d: int, m, rows=None) -> np.ndarray:
        return np.asarray(self.outcome.mean(z, d, m, self._rows(self.spec.mu, rows)))

    def mediator_mean_sd(self, z: int, d: int, rows=None):
        if self.mediator_kind.is_discrete:
            raise QuadratureOverflow("quadrature path is for continuous mediators")
        return self.mediator.mean_sd(z, d, self._rows(self.spec.r, rows))

    def n_rows(self) -> int:
        return self.spec.pi.shape[0]

    # clipping policy --------------------------------------------------------
    def denom(self, values: np.ndarray, name: str) -> np.ndarray:
        """Apply the positivity floor to values used in a denominator.

        With a positive clip floor, low values are raised to the floor and the
        event is counted under ``clipped:<name>``. With clipping disabled
        (clip=0) any non-positive or non-finite value is a hard error.
        """
        values = np.asarray(values, dtype=float)
        if self.clip > 0:
            low = values < self.clip
            nlow = int(np.sum(low))
            if nlow:
                key = f"clipped:{name}"
                self.diagnostics[key] = self.diagnostics.get(key, 0) + nlow
                values = np.where(low, self.clip, values)
            return values
        if not np.isfinite(values).all() or np.any(values < 1e-12):
            raise ExtremePropensity(
                f"{name} has values at or below zero with clipping disabled"
            )
        return values

    def count(self, key: str, increment: int = 1) -> None:
        self.diagnostics[key] = self.diagnostics.get(key, 0) + increment


# ------------------------------------------------------------------- fitting


def fit_parametric_bundle(
    data: Dataset,
    spec: ModelSpec | None = None,
    clip: float = DEFAULT_CLIP,
) -> NuisanceBundle:
    """Fit the four parametric working models on a validated dataset.

    The treatment model regresses Z on the pi features; the event model
    regresses D on [Z, p features] (or on the p features within the treated
    arm under strong monotonicity, where the control arm is structurally
    event-free); the mediator model regresses M on [Z, D, r features]
    (logistic, sequential-split categorical, or Gaussian-linear); the outcome
    model regresses Y on [Z, D, M, mu features], logistic when Y is binary.
    """
    if spec is None:
        spec = ModelSpec.shared(data.x)

    try:
        pi_fit = glm.fit_logistic(_with_intercept(spec.pi), data.z)
    except FitError as err:
        raise _tag("treatment", err) from None

    try:
        if data.monotonicity == Monotonicity.STRONG:
            z1 = data.z == 1
            p_fit = glm.fit_logistic(_with_intercept(spec.p[z1]), data.d[z1])
        else:
            p_fit = glm.fit_logistic(
                _with_intercept(data.z.astype(float), spec.p), data.d
            )
    except FitError as err:
        raise _tag("event", err) from None

    try:
        mediator = _fit_mediator(data, spec.r)
    except FitError as err:
        raise _tag("mediator", err) from None

    try:
        y_vals = np.unique(data.y)
        zdm = _with_intercept(
            data.z.astype(float), data.d.astype(float), data.m, spec.mu
        )
        if len(y_vals) <= 2 and np.isin(y_vals, (0.0, 1.0)).all():
            mu_fit = glm.fit_logistic(zdm, data.y)
        else:
            mu_fit = glm.fit_linear(zdm, data.y)
    except FitError as err:
        raise _tag("outcome", err) from None

    return NuisanceBundle(
        treatment=TreatmentComponent(pi_fit),
        event=EventComponent(p_fit, data.monotonicity),
        mediator=mediator,
        outcome=OutcomeComponent(mu_fit),
        spec=spec,
        mediator_kind=data.mediator_kind,
        monotonicity=data.monotonicity,
        clip=clip,
        provenance="parametric",
    )


def _fit_mediator(data: Dataset, r_features: np.ndarray):
    zd = (data.z.astype(float), data.d.astype(float))
    if data.mediator_kind.kind == "continuous_gaussian":
        fit = glm.fit_linear(_with_intercept(*zd, r_features), data.m)
        return ContinuousMediatorComponent(fit)
    m_int = data.m.astype(np.int64)
    m_max = data.mediator_kind.m_max
    split_fits = []
    for j in range(1, m_max + 1):
        keep = m_int <= j
        if not np.any(keep):
            raise EmptyCell(f"no rows with mediator level <= {j}")
        design = _with_intercept(zd[0][keep], zd[1][keep], r_features[keep])
        split_fits.append(glm.fit_logistic(design, (m_int[keep] == j).astype(float)))
    return DiscreteMediatorComponent(split_fits, m_max)


# -------------------------------------------------------- derived quantities


def principal_score(bundle: NuisanceBundle, stratum: Stratum, rows=None) -> np.ndarray:
    """Per-row stratum membership probability from the event model.

    Equals the companion-cell probability minus (for compliers) the z=0 event
    probability. Tiny negative values from model noise are clamped to zero
    and counted; materially negative values signal a model conflict.
    """
    z_star, d_star = stratum.companion
    score = bundle.p(z_star, d_star, rows)
    if stratum.k:
        score = score - bundle.p(0, 1, rows)
    low = score < -1e-8
    if np.any(low):
        raise NegativeScore(
            f"principal score for stratum {stratum.label} reaches "
            f"{float(score.min()):.3g}"
        )
    tiny = (score < 0) & ~low
    if np.any(tiny):
        bundle.count("principal_score_clamped", int(np.sum(tiny)))
        score = np.where(tiny, 0.0, score)
    return score


def eta(bundle: NuisanceBundle, target: CrossWorldTarget, rows=None) -> np.ndarray:
    """Outcome mean under one arm, averaged over the mediator law of another.

    Discrete mediators sum the outcome model against the pmf; continuous
    mediators integrate with 32-node Gauss-Hermite quadrature centered at the
    mediator model's conditional mean.
    """
    z, zp = target.z, target.z_prime
    dz, dzp = target.d_z, target.d_z_prime
    if bundle.mediator_kind.is_discrete:
        total = None
        for level in bundle.mediator_kind.levels:
            term = bundle.mu(z, dz, level, rows) * bundle.r(zp, dzp, level, rows)
            total = term if total is None else total + term
        return total
    mean, sd = bundle.mediator_mean_sd(zp, dzp, rows)
    total = np.zeros_like(mean)
    scale = np.sqrt(2.0) * sd
    for node, weight in zip(_GH_NODES, _GH_WEIGHTS):
        m_node = mean + scale * node
        mu_vals = bundle.mu(z, dz, m_node, rows)
        if not np.isfinite(mu_vals).all():
            raise QuadratureOverflow(
                "outcome model returned a non-finite value at a quadrature node"
            )
        total += weight * mu_vals
    return total * _GH_NORM


def p_marginal_dr(data: Dataset, bundle: NuisanceBundle, z: int, d: int) -> float:
    """Doubly robust marginal (z, d) cell probability.

    Augments the model-based cell probability with inverse-propensity
    residuals, so it stays consistent when either the treatment model or the
    event model is correct.
    """
    p_hat = bundle.p(z, d, None)
    pi_hat = bundle.denom(bundle.pi(z, None), "pi")
    in_arm = (data.z == z).astype(float)
    in_cell = (data.d == d).astype(float)
    aug = in_arm * (in_cell - p_hat) / pi_hat + p_hat
    return float(np.mean(aug))

"""Stratum-mean estimators and their assembly into mediation effects.

Four single-robust moment estimators (forms ``a`` through ``d``), the
influence-function score pair behind the multiply robust estimator, and the
bookkeeping that turns a table of stratum means into indirect, direct, and
total effects on the difference and ratio scales. Every estimator divides by
the same augmented stratum proportion, so the forms differ only in how the
numerator uses the fitted models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nuisance
from .core import CrossWorldTarget, Dataset, Monotonicity, Stratum, strata_for_mode
from .errors import (
    ConfigError,
    DensityRatioOverflow,
    DivisionByZero,
    EmptyStratumEstimate,
    EstimationError,
)

DENSITY_RATIO_CAP = 1e6
MOMENT_FORMS = ("a", "b", "c", "d")


@dataclass(frozen=True)
class EifComponents:
    """Per-unit score pair whose means give the multiply robust estimator.

    ``psi`` carries the target-specific numerator; ``delta`` is the stratum
    proportion score and depends on the stratum alone, so two targets sharing
    a stratum have identical ``delta`` vectors.
    """

    psi: np.ndarray
    delta: np.ndarray
    target: CrossWorldTarget


def dr_proportion(data: Dataset, bundle, stratum: Stratum) -> float:
    """Augmented stratum proportion, the shared estimator denominator."""
    z_star, d_star = stratum.companion
    value = nuisance.p_marginal_dr(data, bundle, z_star, d_star)
    if stratum.k:
        value -= nuisance.p_marginal_dr(data, bundle, 0, 1)
    if not math.isfinite(value) or value <= 0:
        raise EmptyStratumEstimate(
            f"augmented proportion for stratum {stratum.label} is "
            f"{value:.3e}; the stratum is empty under the fitted models"
        )
    return value


def _density_ratio(bundle, target: CrossWorldTarget, m_obs: np.ndarray,
                   rows: np.ndarray) -> np.ndarray:
    top = bundle.r(target.z_prime, target.d_z_prime, m_obs, rows)
    bottom = bundle.denom(
        bundle.r(target.z, target.d_z, m_obs, rows), "mediator"
    )
    ratio = top / bottom
    if np.any(ratio > DENSITY_RATIO_CAP):
        worst = int(rows[np.argmax(ratio)])
        raise DensityRatioOverflow(
            f"mediator density ratio exceeds {DENSITY_RATIO_CAP:.0e} at "
            f"unit {worst}"
        )
    return ratio


def _weighted_eta(bundle, target: CrossWorldTarget,
                  profile: np.ndarray) -> np.ndarray:
    levels = profile.shape[0]
    total = np.zeros(bundle.n_rows())
    for m in range(levels):
        total += (profile[m]
                  * bundle.mu(target.z, target.d_z, m)
                  * bundle.r(target.z_prime, target.d_z_prime, m))
    return total


def eif_components(
    data: Dataset,
    bundle,
    target: CrossWorldTarget,
    weight_profile: np.ndarray | None = None,
) -> EifComponents:
    """Evaluate the influence score pair on every unit.

    ``weight_profile``, when given, is a (levels, n) array of sensitivity
    weights; it multiplies the cross-world regression wherever the mediator
    level enters, turning this into the bias-corrected score.
    """
    if weight_profile is not None and not bundle.mediator_kind.is_discrete:
        raise ConfigError(
            "weighted scores require a mediator with finite support"
        )
    n = data.n
    stratum = target.stratum
    z_star, d_star = stratum.companion
    k = stratum.k

    p_star = bundle.p(z_star, d_star)
    p01 = bundle.p(0, 1)
    score_x = nuisance.principal_score(bundle, stratum)
    if weight_profile is None:
        eta_x = nuisance.eta(bundle, target)
    else:
        eta_x = _weighted_eta(bundle, target, weight_profile)

    # proportion score and the event-residual weight it shares with psi
    residual_weight = np.zeros(n)
    on_star = data.z == z_star
    rows_star = np.flatnonzero(on_star)
    pi_star = bundle.denom(bundle.pi(z_star, rows_star), "treatment")
    residual_weight[rows_star] = (
        (data.d[rows_star] == d_star).astype(float) - p_star[rows_star]
    ) / pi_star
    if k:
        rows0 = np.flatnonzero(data.z == 0)
        pi0 = bundle.denom(bundle.pi(0, rows0), "treatment")
        residual_weight[rows0] -= k * (data.d[rows0] - p01[rows0]) / pi0
    delta = residual_weight + p_star - k * p01

    psi = residual_weight * eta_x + score_x * eta_x

    # outcome-residual term on the (z, d_z) cell, reweighted to the other arm
    rows_z = np.flatnonzero((data.z == target.z) & (data.d == target.d_z))
    if rows_z.size:
        m_obs = data.m[rows_z]
        ratio = _density_ratio(bundle, target, m_obs, rows_z)
        if weight_profile is not None:
            ratio = ratio * weight_profile[m_obs.astype(int), rows_z]
        cell_prob = bundle.denom(
            bundle.p(target.z, target.d_z, rows_z), "event"
        ) * bundle.denom(bundle.pi(target.z, rows_z), "treatment")
        resid = data.y[rows_z] - bundle.mu(target.z, target.d_z, m_obs, rows_z)
        psi[rows_z] += score_x[rows_z] / cell_prob * ratio * resid

    # regression-gap term on the (z', d_{z'}) cell
    rows_zp = np.flatnonzero(
        (data.z == target.z_prime) & (data.d == target.d_z_prime)
    )
    if rows_zp.size:
        m_obs = data.m[rows_zp]
        mu_at = bundle.mu(target.z, target.d_z, m_obs, rows_zp)
        if weight_profile is not None:
            mu_at = mu_at * weight_profile[m_obs.astype(int), rows_zp]
        cell_prob = bundle.denom(
            bundle.p(target.z_prime, target.d_z_prime, rows_zp), "event"
        ) * bundle.denom(bundle.pi(target.z_prime, rows_zp), "treatment")
        psi[rows_zp] += score_x[rows_zp] / cell_prob * (mu_at - eta_x[rows_zp])

    if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(delta))):
        raise EstimationError(
            "influence scores contain non-finite values; inspect the fitted "
            "models' diagnostics"
        )
    return EifComponents(psi=psi, delta=delta, target=target)


def theta_mr(data: Dataset, bundle, target: CrossWorldTarget) -> float:
    """Multiply robust stratum mean: ratio of the two score means."""
    comps = eif_components(data, bundle, target)
    denom = float(comps.delta.mean())
    if denom <= 0:
        raise EmptyStratumEstimate(
            f"proportion score for stratum {target.stratum.label} has "
            f"nonpositive mean {denom:.3e}"
        )
    return float(comps.psi.mean() / denom)


def theta_moment(data: Dataset, bundle, target: CrossWorldTarget,
                 form: str) -> float:
    """One of the four single-robust moment estimators."""
    if form not in MOMENT_FORMS:
        raise ConfigError(f"unknown moment form {form!r}; expected one of "
                          f"{MOMENT_FORMS}")
    n = data.n
    denom = dr_proportion(data, bundle, target.stratum)

    if form == "a":
        rows = np.flatnonzero((data.z == target.z) & (data.d == target.d_z))
        ratio = _density_ratio(bundle, target, data.m[rows], rows)
        cell_prob = bundle.denom(
            bundle.p(target.z, target.d_z, rows), "event"
        ) * bundle.denom(bundle.pi(target.z, rows), "treatment")
        score_x = nuisance.principal_score(bundle, target.stratum, rows)
        total = float(np.sum(score_x / cell_prob * ratio * data.y[rows]))
        return total / n / denom

    if form == "b":
        eta_x = nuisance.eta(bundle, target)
        z_star, d_star = target.stratum.companion
        rows_star = np.flatnonzero(
            (data.z == z_star) & (data.d == d_star)
        )
        pi_star = bundle.denom(bundle.pi(z_star, rows_star), "treatment")
        total = float(np.sum(eta_x[rows_star] / pi_star))
        if target.stratum.k:
            rows01 = np.flatnonzero((data.z == 0) & (data.d == 1))
            pi0 = bundle.denom(bundle.pi(0, rows01), "treatment")
            total -= target.stratum.k * float(np.sum(eta_x[rows01] / pi0))
        return total / n / denom

    if form == "c":
        rows = np.flatnonzero(
            (data.z == target.z_prime) & (data.d == target.d_z_prime)
        )
        mu_at = bundle.mu(target.z, target.d_z, data.m[rows], rows)
        cell_prob = bundle.denom(
            bundle.p(target.z_prime, target.d_z_prime, rows), "event"
        ) * bundle.denom(bundle.pi(target.z_prime, rows), "treatment")
        score_x = nuisance.principal_score(bundle, target.stratum, rows)
        total = float(np.sum(score_x / cell_prob * mu_at))
        return total / n / denom

    score_x = nuisance.principal_score(bundle, target.stratum)
    eta_x = nuisance.eta(bundle, target)
    return float(np.mean(score_x * eta_x)) / denom


# -------------------------------------------------------------- effect layer


@dataclass(frozen=True)
class ThetaTable:
    """Stratum means for every arm pair, plus the stratum proportions."""

    values: dict[tuple[str, int, int], float]
    proportions: dict[str, float]
    monotonicity: Monotonicity
    method: str

    def theta(self, stratum: Stratum, z: int, z_prime: int) -> float:
        return self.values[(stratum.label, z, z_prime)]


ARM_PAIRS = ((1, 1), (1, 0), (0, 0))


def theta_table(data: Dataset, bundle, method: str = "mr") -> ThetaTable:
    """Estimate every stratum mean the mode admits, with one method.

    ``method`` is ``"mr"`` or a moment form letter. All entries share the
    bundle, so decomposition identities hold exactly within the table.
    """
    values: dict[tuple[str, int, int], float] = {}
    proportions: dict[str, float] = {}
    for stratum in strata_for_mode(data.monotonicity):
        proportions[stratum.label] = dr_proportion(data, bundle, stratum)
        for z, zp in ARM_PAIRS:
            target = CrossWorldTarget(z=z, z_prime=zp, stratum=stratum)
            if method == "mr":
                value = theta_mr(data, bundle, target)
            else:
                value = theta_moment(data, bundle, target, method)
            values[(stratum.label, z, zp)] = value
    return ThetaTable(values=values, proportions=proportions,
                      monotonicity=data.monotonicity, method=method)


@dataclass(frozen=True)
class StratumEffects:
    pnie: float
    pnde: float
    pce: float


@dataclass(frozen=True)
class EffectSet:
    """Per-stratum and marginal mediation effects on one scale.

    On the difference scale the totals are sums of their parts by
    construction (``pce = pnie + pnde`` and ``itt = itt_nie + itt_nde`` hold
    bitwise); on the ratio scale they are products.
    """

    scale: str
    per_stratum: dict[str, StratumEffects]
    itt_nie: float
    itt_nde: float
    itt: float
    proportions: dict[str, float] = field(default_factory=dict)


def assemble_effects(table: ThetaTable, scale: str = "difference") -> EffectSet:
    strata = strata_for_mode(table.monotonicity)
    if scale not in ("difference", "ratio"):
        raise ConfigError(f"unknown scale {scale!r}; expected difference "
                          "or ratio")
    if scale == "ratio":
        for key, value in table.values.items():
            if value <= 0:
                raise DivisionByZero(
                    f"ratio-scale effects need positive stratum means; "
                    f"entry {key} is {value:.3e}"
                )

    per_stratum: dict[str, StratumEffects] = {}
    for stratum in strata:
        t11 = table.theta(stratum, 1, 1)
        t10 = table.theta(stratum, 1, 0)
        t00 = table.theta(stratum, 0, 0)
        if scale == "difference":
            pnie, pnde = t11 - t10, t10 - t00
            pce = pnie + pnde
        else:
            pnie, pnde = t11 / t10, t10 / t00
            pce = pnie * pnde
        per_stratum[stratum.label] = StratumEffects(pnie=pnie, pnde=pnde,
                                                    pce=pce)

    def marginal_mean(z: int, zp: int) -> float:
        return sum(
            table.proportions[s.label] * table.theta(s, z, zp) for s in strata
        )

    if scale == "difference":
        itt_nie = marginal_mean(1, 1) - marginal_mean(1, 0)
        itt_nde = marginal_mean(1, 0) - marginal_mean(0, 0)
        itt = itt_nie + itt_nde
    else:
        itt_nie = marginal_mean(1, 1) / marginal_mean(1, 0)
        itt_nde = marginal_mean(1, 0) / marginal_mean(0, 0)
        itt = itt_nie * itt_nde
    return EffectSet(scale=scale, per_stratum=per_stratum, itt_nie=itt_nie,
                     itt_nde=itt_nde, itt=itt,
                     proportions=dict(table.proportions))

"""Synthetic benchmark process, misspecification scenarios, and studies.

A four-covariate Gaussian design drives a binary treatment, a binary
post-treatment event, a binary mediator, and a Gaussian outcome, all with
known coefficients. Potential event and mediator values are generated from
one shared uniform per unit, so the event ordering D1 >= D0 holds exactly
while every observed conditional law still matches the generating models.
That latent construction buys two independent truth oracles: a Monte-Carlo
plug-in of the identification formula and a direct average of potential
outcomes within realized strata.

Misspecification is purely a feature-matrix switch: a scenario hands
selected working models a fixed nonlinear transform of the covariates while
the generated data stream stays bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from . import crossfit, estimators, inference, nuisance
from .core import (
    COMPLIERS,
    CrossWorldTarget,
    Dataset,
    MediatorKind,
    Monotonicity,
    _tabulate_cells,
    strata_for_mode,
)
from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    FitError,
    TooManyFailedReplicates,
)
from .glm import expit

# ------------------------------------------------------- generating process

N_COVARIATES = 4

TREATMENT_SLOPES = np.array([-1.0, 0.5, -0.25, -0.1])

EVENT_INTERCEPT = -1.0
EVENT_TREATMENT = 2.0
EVENT_SLOPES = np.array([1.0, -0.8, 0.6, -1.0])

MEDIATOR_INTERCEPT = -1.8
MEDIATOR_TREATMENT = 2.0
MEDIATOR_EVENT = 1.5
MEDIATOR_SLOPES = np.array([1.0, -0.5, 0.9, -1.0])

OUTCOME_INTERCEPT = 210.0
OUTCOME_TREATMENT = 1.5
OUTCOME_EVENT = -1.0
OUTCOME_MEDIATOR = 1.0
OUTCOME_SLOPES = np.array([27.4, 13.7, 13.7, 13.7])
OUTCOME_NOISE_SD = 1.0

for _coef in (TREATMENT_SLOPES, EVENT_SLOPES, MEDIATOR_SLOPES, OUTCOME_SLOPES):
    _coef.setflags(write=False)

DEFAULT_TRUTH_DRAWS = 10_000_000
TRUTH_SEED = 771_220
_CHUNK = 1_000_000

PARAMETRIC_METHODS = ("a", "b", "c", "d", "mr")
KNOWN_METHODS = PARAMETRIC_METHODS + ("np",)

EFFECT_NAMES = ("pnie", "pnde", "pce")
ARM_PAIRS = estimators.ARM_PAIRS


def _event_lp(z, x: np.ndarray) -> np.ndarray:
    return EVENT_INTERCEPT + EVENT_TREATMENT * z + x @ EVENT_SLOPES


def _mediator_lp(z, d, x: np.ndarray) -> np.ndarray:
    return (MEDIATOR_INTERCEPT + MEDIATOR_TREATMENT * z
            + MEDIATOR_EVENT * d + x @ MEDIATOR_SLOPES)


def _outcome_mean(z, d, m, x: np.ndarray, null: bool) -> np.ndarray:
    base = OUTCOME_INTERCEPT + x @ OUTCOME_SLOPES
    if null:
        # Null variant: the outcome ignores treatment, event and mediator,
        # so every cross-world contrast is exactly zero in the population.
        return base
    return (base + OUTCOME_TREATMENT * z + OUTCOME_EVENT * d
            + OUTCOME_MEDIATOR * m)


@dataclass(frozen=True)
class _LatentDraw:
    """One batch of units with their full potential-value lattice."""

    x: np.ndarray
    z: np.ndarray
    d1: np.ndarray
    d0: np.ndarray
    m_pot: np.ndarray  # shape (2, 2, n): mediator value under (z, d)
    eps: np.ndarray
    null: bool

    def d_for_arm(self, z: int) -> np.ndarray:
        return self.d1 if z == 1 else self.d0

    def natural_m(self, z: int) -> np.ndarray:
        dz = self.d_for_arm(z)
        return np.where(dz == 1, self.m_pot[z, 1], self.m_pot[z, 0])

    def cross_world_y(self, z: int, z_prime: int) -> np.ndarray:
        """Outcome under arm z with the mediator from arm z_prime."""
        return (_outcome_mean(z, self.d_for_arm(z), self.natural_m(z_prime),
                              self.x, self.null)
                + OUTCOME_NOISE_SD * self.eps)

    def observed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = np.where(self.z == 1, self.d1, self.d0)
        m = np.where(self.z == 1, self.natural_m(1), self.natural_m(0))
        y = (_outcome_mean(self.z, d, m, self.x, self.null)
             + OUTCOME_NOISE_SD * self.eps)
        return d, m, y


def _draw_latent(rng: np.random.Generator, n: int, null: bool) -> _LatentDraw:
    x = rng.standard_normal((n, N_COVARIATES))
    z = (rng.random(n) < expit(x @ TREATMENT_SLOPES)).astype(np.int64)
    u_event = rng.random(n)
    d1 = (u_event <= expit(_event_lp(1, x))).astype(np.int64)
    d0 = (u_event <= expit(_event_lp(0, x))).astype(np.int64)
    u_med = rng.random(n)
    m_pot = np.empty((2, 2, n), dtype=np.int64)
    for zz in (0, 1):
        for dd in (0, 1):
            m_pot[zz, dd] = u_med <= expit(_mediator_lp(zz, dd, x))
    eps = rng.standard_normal(n)
    return _LatentDraw(x=x, z=z, d1=d1, d0=d0, m_pot=m_pot, eps=eps,
                       null=null)


def simulate(n: int, seed: int, *, null: bool = False) -> Dataset:
    """Draw an observed sample of ``n`` units from the benchmark process."""
    if n < 1:
        raise DataError(f"need at least one unit, got n={n}")
    rng = np.random.default_rng(seed)
    latent = _draw_latent(rng, n, null)
    d, m, y = latent.observed()
    z = latent.z.astype(float)
    d = d.astype(float)
    m = m.astype(float)
    return Dataset(
        n=n, x=latent.x, z=z, d=d, m=m, y=y,
        mediator_kind=MediatorKind.binary(),
        monotonicity=Monotonicity.STANDARD,
        cell_counts=_tabulate_cells(z, d),
    )


# ------------------------------------------------------------------ scenarios

_SCENARIO_ROLES = {
    "I": frozenset(),
    "II": frozenset({"pi"}),
    "III": frozenset({"p"}),
    "IV": frozenset({"r"}),
    "V": frozenset({"mu"}),
    "VI": frozenset({"pi", "p", "r", "mu"}),
}


class ScenarioId(Enum):
    """Which working models receive transformed covariates."""

    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VI = "VI"

    @property
    def transformed_roles(self) -> frozenset:
        return _SCENARIO_ROLES[self.value]


def transform_covariates(x: np.ndarray) -> np.ndarray:
    """Fixed nonlinear distortion of the four covariate columns.

    The second column divides by ``1 + x1``; a zero denominator passes
    through as ``inf`` on purpose, and callers count non-finite feature
    cells in their diagnostics instead of censoring rows.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != N_COVARIATES:
        raise DataError(
            f"expected an (n, {N_COVARIATES}) covariate matrix, "
            f"got shape {x.shape}"
        )
    x1, x2, x3, x4 = (x[:, j] for j in range(N_COVARIATES))
    with np.errstate(divide="ignore", invalid="ignore"):
        second = x2 / (1.0 + x1)
    return np.column_stack([
        np.exp(0.5 * x1),
        second,
        (x2 * x3 / 25.0 + 0.6) ** 3,
        (x2 + x4 + 20.0) ** 2,
    ])


def scenario_spec(x: np.ndarray, scenario: ScenarioId) -> nuisance.ModelSpec:
    """Feature matrices for one scenario.

    Roles listed by the scenario get the transformed covariates; everything
    else keeps the original ones. The data never change, only what each
    working model is allowed to see.
    """
    x = np.asarray(x, dtype=float)
    tilde = transform_covariates(x)
    roles = scenario.transformed_roles

    def pick(role: str) -> np.ndarray:
        return tilde if role in roles else x

    return nuisance.ModelSpec(pi=pick("pi"), p=pick("p"), r=pick("r"),
                              mu=pick("mu"))


def nonfinite_feature_count(spec: nuisance.ModelSpec) -> int:
    """Non-finite cells across the four feature matrices (diagnostics)."""
    return int(sum(
        mat.size - int(np.isfinite(mat).sum())
        for mat in (spec.pi, spec.p, spec.r, spec.mu)
    ))


# ----------------------------------------------------------------- true values

@dataclass(frozen=True)
class TruthHandle:
    """Monte-Carlo population values with quantified simulation error.

    ``method`` records which oracle produced the numbers: ``"plug-in"``
    evaluates the identification formula at the exact generating nuisances,
    ``"potential-outcome"`` averages latent cross-world outcomes within
    realized strata. The two agree up to Monte-Carlo error and are compared
    in the test suite.
    """

    thetas: Mapping[tuple[str, int, int], float]
    theta_ses: Mapping[tuple[str, int, int], float]
    effects: Mapping[tuple[str, str], float]
    effect_ses: Mapping[tuple[str, str], float]
    proportions: Mapping[str, float]
    proportion_ses: Mapping[str, float]
    draws: int
    seed: int
    null: bool
    method: str

    def theta(self, target: CrossWorldTarget) -> float:
        return self.thetas[(target.stratum.label, target.z, target.z_prime)]

    def theta_se(self, target: CrossWorldTarget) -> float:
        return self.theta_ses[
            (target.stratum.label, target.z, target.z_prime)
        ]


def _ratio_stats(sums: dict) -> tuple[float, float]:
    """Mean ratio and its delta-method standard error from running sums."""
    n = sums["n"]
    mean_a = sums["a"] / n
    mean_b = sums["b"] / n
    var_a = sums["aa"] / n - mean_a ** 2
    var_b = sums["bb"] / n - mean_b ** 2
    cov = sums["ab"] / n - mean_a * mean_b
    point = mean_a / mean_b
    var_point = (var_a - 2.0 * point * cov + point ** 2 * var_b) / (
        n * mean_b ** 2
    )
    return point, math.sqrt(max(var_point, 0.0))


def _accumulate_ratio(sums: dict, a: np.ndarray, b: np.ndarray) -> None:
    sums["n"] += a.size
    sums["a"] += float(a.sum())
    sums["b"] += float(b.sum())
    sums["aa"] += float((a * a).sum())
    sums["bb"] += float((b * b).sum())
    sums["ab"] += float((a * b).sum())


def _new_ratio_sums() -> dict:
    return {"n": 0, "a": 0.0, "b": 0.0, "aa": 0.0, "bb": 0.0, "ab": 0.0}


def compute_truth(seed: int, draws: int = DEFAULT_TRUTH_DRAWS, *,
                  null: bool = False) -> TruthHandle:
    """Plug-in truth: the identification formula at the exact nuisances.

    Every stratum mean is a ratio of covariate expectations, estimated by
    Monte Carlo over the covariate law in fixed-size chunks; standard
    errors come from the delta method for ratios of means. Derived effects
    are integrated directly (numerator contrasts share the covariate draws)
    so their errors do not need cross-target covariances.
    """
    if draws < 1_000_000:
        raise ConfigError(
            f"truth needs at least 1e6 draws for a trustworthy Monte-Carlo "
            f"error, got {draws}"
        )
    rng = np.random.default_rng(seed)
    strata = strata_for_mode(Monotonicity.STANDARD)
    theta_sums = {(s.label, z, zp): _new_ratio_sums()
                  for s in strata for z, zp in ARM_PAIRS}
    effect_sums = {(s.label, name): _new_ratio_sums()
                   for s in strata for name in EFFECT_NAMES}
    prop_sums = {s.label: {"n": 0, "e": 0.0, "ee": 0.0} for s in strata}

    remaining = draws
    while remaining > 0:
        size = min(_CHUNK, remaining)
        remaining -= size
        x = rng.standard_normal((size, N_COVARIATES))
        p_treated = expit(_event_lp(1, x))
        p_control = expit(_event_lp(0, x))
        share = {
            "10": p_treated - p_control,
            "11": p_control,
            "00": 1.0 - p_treated,
        }
        for stratum in strata:
            e = share[stratum.label]
            ps = prop_sums[stratum.label]
            ps["n"] += size
            ps["e"] += float(e.sum())
            ps["ee"] += float((e * e).sum())

            eta = {}
            for z, zp in ARM_PAIRS:
                d_z = stratum.d_for_arm(z)
                d_zp = stratum.d_for_arm(zp)
                q = expit(_mediator_lp(zp, d_zp, x))
                eta[(z, zp)] = (
                    _outcome_mean(z, d_z, 0, x, null) * (1.0 - q)
                    + _outcome_mean(z, d_z, 1, x, null) * q
                )
                _accumulate_ratio(theta_sums[(stratum.label, z, zp)],
                                  e * eta[(z, zp)], e)
            contrasts = {
                "pnie": eta[(1, 1)] - eta[(1, 0)],
                "pnde": eta[(1, 0)] - eta[(0, 0)],
                "pce": eta[(1, 1)] - eta[(0, 0)],
            }
            for name in EFFECT_NAMES:
                _accumulate_ratio(effect_sums[(stratum.label, name)],
                                  e * contrasts[name], e)

    thetas, theta_ses = {}, {}
    for key, sums in theta_sums.items():
        thetas[key], theta_ses[key] = _ratio_stats(sums)
    effects, effect_ses = {}, {}
    for key, sums in effect_sums.items():
        effects[key], effect_ses[key] = _ratio_stats(sums)
    proportions, proportion_ses = {}, {}
    for label, ps in prop_sums.items():
        mean = ps["e"] / ps["n"]
        var = ps["ee"] / ps["n"] - mean ** 2
        proportions[label] = mean
        proportion_ses[label] = math.sqrt(max(var, 0.0) / ps["n"])
    return TruthHandle(
        thetas=thetas, theta_ses=theta_ses, effects=effects,
        effect_ses=effect_ses, proportions=proportions,
        proportion_ses=proportion_ses, draws=draws, seed=seed, null=null,
        method="plug-in",
    )


def potential_outcome_truth(seed: int, draws: int = DEFAULT_TRUTH_DRAWS, *,
                            null: bool = False) -> TruthHandle:
    """Independent oracle: average latent cross-world outcomes per stratum.

    No identification formula is involved; units are generated with their
    full potential-value lattice and averaged within the stratum they
    actually fall into. Effects are within-unit contrasts, so the shared
    outcome noise cancels exactly.
    """
    if draws < 1_000_000:
        raise ConfigError(
            f"truth needs at least 1e6 draws for a trustworthy Monte-Carlo "
            f"error, got {draws}"
        )
    rng = np.random.default_rng(seed)
    strata = strata_for_mode(Monotonicity.STANDARD)
    theta_sums = {(s.label, z, zp): {"n": 0, "y": 0.0, "yy": 0.0}
                  for s in strata for z, zp in ARM_PAIRS}
    effect_sums = {(s.label, name): {"n": 0, "y": 0.0, "yy": 0.0}
                   for s in strata for name in EFFECT_NAMES}
    counts = {s.label: 0 for s in strata}
    total = 0

    remaining = draws
    while remaining > 0:
        size = min(_CHUNK, remaining)
        remaining -= size
        total += size
        latent = _draw_latent(rng, size, null)
        masks = {
            "10": (latent.d1 == 1) & (latent.d0 == 0),
            "11": (latent.d1 == 1) & (latent.d0 == 1),
            "00": (latent.d1 == 0) & (latent.d0 == 0),
        }
        y_cross = {(z, zp): latent.cross_world_y(z, zp)
                   for z, zp in ARM_PAIRS}
        deltas = {
            "pnie": y_cross[(1, 1)] - y_cross[(1, 0)],
            "pnde": y_cross[(1, 0)] - y_cross[(0, 0)],
            "pce": y_cross[(1, 1)] - y_cross[(0, 0)],
        }
        for label, mask in masks.items():
            counts[label] += int(mask.sum())
            for z, zp in ARM_PAIRS:
                vals = y_cross[(z, zp)][mask]
                ts = theta_sums[(label, z, zp)]
                ts["n"] += vals.size
                ts["y"] += float(vals.sum())
                ts["yy"] += float((vals * vals).sum())
            for name in EFFECT_NAMES:
                vals = deltas[name][mask]
                es = effect_sums[(label, name)]
                es["n"] += vals.size
                es["y"] += float(vals.sum())
                es["yy"] += float((vals * vals).sum())

    def mean_se(sums: dict) -> tuple[float, float]:
        n = sums["n"]
        mean = sums["y"] / n
        var = sums["yy"] / n - mean ** 2
        return mean, math.sqrt(max(var, 0.0) / n)

    thetas, theta_ses = {}, {}
    for key, sums in theta_sums.items():
        thetas[key], theta_ses[key] = mean_se(sums)
    effects, effect_ses = {}, {}
    for key, sums in effect_sums.items():
        effects[key], effect_ses[key] = mean_se(sums)
    proportions, proportion_ses = {}, {}
    for label, count in counts.items():
        share = count / total
        proportions[label] = share
        proportion_ses[label] = math.sqrt(share * (1.0 - share) / total)
    return TruthHandle(
        thetas=thetas, theta_ses=theta_ses, effects=effects,
        effect_ses=effect_ses, proportions=proportions,
        proportion_ses=proportion_ses, draws=draws, seed=seed, null=null,
        method="potential-outcome",
    )


_TRUTH_CACHE: dict[tuple[int, int, bool], TruthHandle] = {}


def _cached_truth(seed: int, draws: int, null: bool) -> TruthHandle:
    key = (seed, draws, null)
    if key not in _TRUTH_CACHE:
        _TRUTH_CACHE[key] = compute_truth(seed, draws, null=null)
    return _TRUTH_CACHE[key]


# -------------------------------------------------------------------- studies

@dataclass(frozen=True)
class StudyResult:
    """Everything a scenario study produced.

    ``replicates`` holds one row per replicate and method (plot-ready);
    ``summary`` aggregates to one row per method with mean, bias, SD, RMSE
    and, when intervals were requested, empirical coverage of the truth.
    """

    scenario: ScenarioId
    target_key: tuple[str, int, int]
    n: int
    reps: int
    methods: tuple[str, ...]
    truth: TruthHandle
    replicates: pd.DataFrame
    summary: pd.DataFrame
    diagnostics: dict


def _study_estimators(
    methods: Sequence[str], target: CrossWorldTarget
) -> dict[str, Callable]:
    closures = {}
    for name in methods:
        if name == "mr":
            closures[name] = (
                lambda d, b: estimators.theta_mr(d, b, target)
            )
        elif name in PARAMETRIC_METHODS:
            closures[name] = (
                lambda d, b, form=name: estimators.theta_moment(
                    d, b, target, form
                )
            )
    return closures


def run_scenario_study(
    scenario: ScenarioId,
    n: int,
    reps: int,
    methods: Sequence[str] = PARAMETRIC_METHODS,
    seed: int = 0,
    *,
    target: Optional[CrossWorldTarget] = None,
    bootstrap_b: int = 0,
    level: float = 0.95,
    ci_method: str = "wald",
    folds: int = crossfit.DEFAULT_FOLDS,
    learners: Optional[crossfit.LearnerSpec] = None,
    truth: Optional[TruthHandle] = None,
    truth_draws: int = DEFAULT_TRUTH_DRAWS,
    null: bool = False,
    max_failure_share: float = 0.05,
) -> StudyResult:
    """Repeated-sampling study of one scenario.

    Per replicate the data are simulated once (bit-identical across
    scenarios for a given seed), the scenario's feature matrices are built,
    and one shared parametric bundle serves every moment form and the
    multiply robust estimator. ``bootstrap_b > 0`` adds intervals for those
    methods from a single shared resampling pass per replicate; ``"np"``
    always carries its own plug-in Wald interval. A method that fails on
    more than ``max_failure_share`` of replicates aborts the study.

    Studies with fewer than 100 replicates run but are flagged
    ``low_replicate`` in the summary and diagnostics: their Monte-Carlo
    error is too large to read bias or coverage from.
    """
    if reps < 1:
        raise ConfigError(f"need at least one replicate, got reps={reps}")
    methods = tuple(methods)
    unknown = [m for m in methods if m not in KNOWN_METHODS]
    if unknown:
        raise ConfigError(
            f"unknown methods {unknown}; expected a subset of "
            f"{KNOWN_METHODS}"
        )
    if ci_method not in ("wald", "percentile"):
        raise ConfigError(
            f"unknown ci_method {ci_method!r}; expected wald or percentile"
        )
    if target is None:
        target = CrossWorldTarget(z=1, z_prime=0, stratum=COMPLIERS)
    if truth is None:
        truth = _cached_truth(TRUTH_SEED, truth_draws, null)
    target_key = (target.stratum.label, target.z, target.z_prime)
    theta_true = truth.thetas[target_key]

    parametric = [m for m in methods if m in PARAMETRIC_METHODS]
    closures = _study_estimators(parametric, target)
    z_half = inference.normal_quantile(1.0 - 0.5 * (1.0 - level))
    allowed = int(math.floor(max_failure_share * reps))
    failures: dict[str, dict] = {m: {} for m in methods}
    nonfinite_features = 0
    rows = []

    def record_failure(method: str, rep: int, err: Exception) -> None:
        kind = type(err).__name__
        failures[method][kind] = failures[method].get(kind, 0) + 1
        rows.append({
            "rep": rep, "method": method, "estimate": np.nan,
            "se": np.nan, "ci_low": np.nan, "ci_high": np.nan,
            "covered": np.nan, "error": kind,
        })
        total = sum(failures[method].values())
        if total > allowed:
            detail = ", ".join(
                f"{k} x{v}" for k, v in sorted(failures[method].items())
            )
            raise TooManyFailedReplicates(
                f"method {method!r}: {total} of {reps} study replicates "
                f"failed (tolerated {allowed}): {detail}"
            ) from err

    def record_row(method: str, rep: int, estimate: float,
                   se: float = np.nan, ci_low: float = np.nan,
                   ci_high: float = np.nan) -> None:
        covered = np.nan
        if math.isfinite(ci_low) and math.isfinite(ci_high):
            covered = float(ci_low <= theta_true <= ci_high)
        rows.append({
            "rep": rep, "method": method, "estimate": estimate, "se": se,
            "ci_low": ci_low, "ci_high": ci_high, "covered": covered,
            "error": "",
        })

    for rep in range(reps):
        states = np.random.SeedSequence([seed, rep]).generate_state(3)
        data = simulate(n, int(states[0]), null=null)
        spec = scenario_spec(data.x, scenario)
        nonfinite_features += nonfinite_feature_count(spec)

        if parametric:
            bundle = None
            try:
                bundle = nuisance.fit_parametric_bundle(data, spec=spec)
            except (FitError, EstimationError) as err:
                for method in parametric:
                    record_failure(method, rep, err)
            if bundle is not None:
                points = {}
                for method in parametric:
                    try:
                        points[method] = float(
                            closures[method](data, bundle)
                        )
                    except (FitError, EstimationError) as err:
                        record_failure(method, rep, err)
                if bootstrap_b and points:

                    def refit(resampled: Dataset):
                        return nuisance.fit_parametric_bundle(
                            resampled,
                            spec=scenario_spec(resampled.x, scenario),
                        )

                    live = {m: closures[m] for m in points}
                    try:
                        table = inference.bootstrap_table(
                            data, live, b=bootstrap_b, seed=int(states[1]),
                            level=level, refit=refit,
                            max_failure_share=max_failure_share,
                        )
                    except (TooManyFailedReplicates, FitError,
                            EstimationError) as err:
                        for method in points:
                            record_failure(method, rep, err)
                    else:
                        for method, point in points.items():
                            draws = table[method]
                            if ci_method == "wald":
                                low = point - z_half * draws.se
                                high = point + z_half * draws.se
                            else:
                                low, high = draws.ci_low, draws.ci_high
                            record_row(method, rep, point, draws.se,
                                       low, high)
                else:
                    for method, point in points.items():
                        record_row(method, rep, point)

        if "np" in methods:
            try:
                plan = crossfit.partition(n, folds, int(states[2]))
                est, var = crossfit.theta_np(
                    data, plan,
                    learners if learners is not None
                    else crossfit.LearnerSpec(),
                    target, spec=spec,
                )
                se = math.sqrt(var)
                record_row("np", rep, est, se,
                           est - z_half * se, est + z_half * se)
            except (FitError, EstimationError) as err:
                record_failure("np", rep, err)

    replicates = pd.DataFrame(
        rows, columns=["rep", "method", "estimate", "se", "ci_low",
                       "ci_high", "covered", "error"],
    )
    summary_rows = []
    for method in methods:
        sub = replicates[(replicates["method"] == method)
                         & (replicates["error"] == "")]
        est = sub["estimate"].to_numpy()
        entry = {
            "method": method,
            "n_ok": int(est.size),
            "n_failed": int(sum(failures[method].values())),
            "mean": float(est.mean()) if est.size else np.nan,
            "bias": (float(est.mean() - theta_true) if est.size
                     else np.nan),
            "sd": float(est.std(ddof=1)) if est.size > 1 else np.nan,
            "rmse": (float(np.sqrt(np.mean((est - theta_true) ** 2)))
                     if est.size else np.nan),
        }
        cov = sub["covered"].to_numpy()
        cov = cov[np.isfinite(cov)]
        entry["coverage"] = float(cov.mean()) if cov.size else np.nan
        entry["low_replicate"] = reps < 100
        summary_rows.append(entry)
    summary = pd.DataFrame(summary_rows)

    return StudyResult(
        scenario=scenario,
        target_key=target_key,
        n=n,
        reps=reps,
        methods=methods,
        truth=truth,
        replicates=replicates,
        summary=summary,
        diagnostics={
            "seed": seed,
            "scenario": scenario.value,
            "theta_true": theta_true,
            "theta_true_se": truth.theta_ses[target_key],
            "nonfinite_features": nonfinite_features,
            "failures": failures,
            "bootstrap_b": bootstrap_b,
            "ci_method": ci_method,
            "low_replicate": reps < 100,
            "null": null,
        },
    )

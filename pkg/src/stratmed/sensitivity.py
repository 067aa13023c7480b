"""Sensitivity analysis for violations of the two ignorability assumptions.

Two frameworks are provided. The first relaxes stratum exchangeability: the
analyst posits constant ratios comparing compliers to the concordant stratum
sharing their observed cell, separately for mediator pmfs (``lambda_m1``,
``lambda_m0``, levels 1 and up; the zero level follows from normalization)
and for potential-outcome means (``lambda_y1``, ``lambda_y0``, every level).
The second relaxes mediator ignorability through a mean-ratio function of
the realized mediator, constant at ``zeta`` for nonzero levels.

Both reduce exactly to the unweighted analysis at the identity value 1, and
both enter estimation only through a per-(level, row) weight profile that
multiplies the cross-world regression, so the multiply robust machinery is
shared with the unweighted estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from types import SimpleNamespace

import numpy as np
import pandas as pd

from .core import (
    ALWAYS_TAKERS,
    COMPLIERS,
    CrossWorldTarget,
    Monotonicity,
    Stratum,
)
from .errors import (
    ConfigError,
    DivisionByZero,
    EstimationError,
    ImpliedNegativePmf,
    UnsupportedTarget,
)

_IDENTITY_TOL = 0.0  # identity specs are detected by exact value, not closeness


@dataclass(frozen=True)
class XiSpec:
    """Constant confounding ratios for the stratum-exchangeability relaxation.

    ``lambda_m1`` and ``lambda_m0`` scale the complier mediator pmf against
    the concordant stratum in the same observed cell, at levels 1 and above;
    ``lambda_y1`` and ``lambda_y0`` scale the potential-outcome means at all
    levels. Under strong monotonicity the treated-arm cells are pure, so only
    the two control-side values enter any formula.
    """

    lambda_m1: float = 1.0
    lambda_m0: float = 1.0
    lambda_y1: float = 1.0
    lambda_y0: float = 1.0
    mode: Monotonicity = Monotonicity.STANDARD

    def __post_init__(self):
        for name in ("lambda_m1", "lambda_m0", "lambda_y1", "lambda_y0"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)
                    and value > 0):
                raise ConfigError(f"{name} must be a finite positive number, "
                                  f"got {value!r}")


@dataclass(frozen=True)
class TSpec:
    """Constant mean-ratio value for the mediator-ignorability relaxation.

    ``zeta`` is the common ratio of the treated-arm potential-outcome mean
    between units realizing a nonzero mediator level and units realizing
    level zero, in both assignment arms.
    """

    zeta: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.zeta, (int, float)) and math.isfinite(self.zeta)
                and self.zeta > 0):
            raise ConfigError(f"zeta must be a finite positive number, "
                              f"got {self.zeta!r}")


# ------------------------------------------------------------ pure weight core


def _effective_lambdas(spec: XiSpec) -> tuple[float, float, float, float]:
    """Treated-side ratios are pinned to 1 under strong monotonicity."""
    if spec.mode == Monotonicity.STRONG:
        return 1.0, spec.lambda_m0, 1.0, spec.lambda_y0
    return spec.lambda_m1, spec.lambda_m0, spec.lambda_y1, spec.lambda_y0


def _xi_profiles(
    spec: XiSpec,
    p11: np.ndarray,
    p01: np.ndarray,
    p10: np.ndarray,
    p00: np.ndarray,
    r11: np.ndarray,
    r00: np.ndarray,
) -> SimpleNamespace:
    """Level-by-row confounding profiles and the factor arrays built from them.

    ``r11`` and ``r00`` are (levels, rows) pmf arrays for the cells that mix
    compliers with each concordant stratum. The zero level of each mediator
    ratio is derived from pmf normalization; a nonpositive implied mass means
    the requested ratios are incompatible with these nuisance values.
    """
    lam_m1, lam_m0, lam_y1, lam_y0 = _effective_lambdas(spec)
    levels, n = r11.shape
    gap = p11 - p01

    xi_m1 = np.full((levels, n), lam_m1)
    xi_m0 = np.full((levels, n), lam_m0)

    def zero_level(xi: np.ndarray, p_cell: np.ndarray, r_cell: np.ndarray,
                   side: str) -> np.ndarray:
        factor = xi[1:] * gap + (p01 if side == "treated" else p10)
        mass = p_cell * r_cell[1:] / factor
        numer = 1.0 - (xi[1:] * mass).sum(axis=0)
        denom = 1.0 - mass.sum(axis=0)
        bad = (numer <= 0) | (denom <= 0)
        if np.any(bad):
            row = int(np.argmax(bad))
            raise ImpliedNegativePmf(
                f"confounding ratio for the {side} arm leaves no probability "
                f"at mediator level 0 (first offending row {row})"
            )
        return numer / denom

    xi_m1[0] = zero_level(xi_m1, p11, r11, "treated")
    xi_m0[0] = zero_level(xi_m0, p00, r00, "control")

    a1 = xi_m1 * gap + p01
    a0 = xi_m0 * gap + p10
    return SimpleNamespace(
        xi_m1=xi_m1,
        xi_m0=xi_m0,
        a1=a1,
        a0=a0,
        b1_compliers=p01 / lam_y1 + xi_m1 * gap,
        b0_compliers=p10 / lam_y0 + xi_m0 * gap,
        b1_always=p01 + lam_y1 * xi_m1 * gap,
        b0_never=p10 + lam_y0 * xi_m0 * gap,
        p11=p11,
        p00=p00,
    )


def _xi_weight_from_profiles(
    profiles: SimpleNamespace, stratum: Stratum, arms: tuple[int, int]
) -> np.ndarray:
    pr = profiles
    ones = np.ones_like(pr.a1)
    table = {
        ("10", (1, 1)): lambda: pr.xi_m1 * pr.p11 / pr.b1_compliers,
        ("10", (1, 0)): lambda: (pr.xi_m0 * pr.p00 / pr.a0)
        * (pr.a1 / pr.b1_compliers),
        ("10", (0, 0)): lambda: pr.xi_m0 * pr.p00 / pr.b0_compliers,
        ("00", (1, 1)): lambda: ones,
        ("00", (1, 0)): lambda: pr.p00 / pr.a0,
        ("00", (0, 0)): lambda: pr.p00 / pr.b0_never,
        ("11", (1, 1)): lambda: pr.p11 / pr.b1_always,
        ("11", (1, 0)): lambda: pr.a1 / pr.b1_always,
        ("11", (0, 0)): lambda: ones,
    }
    try:
        return table[(stratum.label, arms)]()
    except KeyError:
        raise UnsupportedTarget(
            f"no confounding weight is defined for stratum {stratum.label} "
            f"with arm pair {arms}"
        ) from None


def implied_stratum_pmfs(profiles: SimpleNamespace, r11, r00) -> dict[str, np.ndarray]:
    """Stratum-specific mediator pmfs implied by the confounding profiles.

    Each array has shape (levels, rows) and must sum to 1 over levels; this
    is the internal consistency property the zero-level derivation enforces.
    """
    pr = profiles
    return {
        "treated_mediator_in_compliers": pr.xi_m1 * pr.p11 * r11 / pr.a1,
        "treated_mediator_in_always_takers": pr.p11 * r11 / pr.a1,
        "control_mediator_in_compliers": pr.xi_m0 * pr.p00 * r00 / pr.a0,
        "control_mediator_in_never_takers": pr.p00 * r00 / pr.a0,
    }


def _rho_from_level_ratios(
    t_treated: np.ndarray, t_control: np.ndarray,
    r_top: np.ndarray, r_bottom: np.ndarray,
) -> np.ndarray:
    """Cross-world density-ratio correction from mean-ratio functions.

    ``t_treated``/``t_control`` hold the ratio value per level (level 0 is 1
    by normalization); ``r_top`` is the mediator pmf in the treated-arm cell
    of the stratum and ``r_bottom`` the control-arm one, shape (levels, rows).
    """
    top_total = np.einsum("m,mi->i", t_treated, r_top)
    bottom_total = np.einsum("m,mi->i", t_control, r_bottom)
    if np.any(bottom_total <= 0) or np.any(top_total <= 0):
        raise DivisionByZero(
            "mean-ratio aggregation produced a nonpositive total; the "
            "mediator pmf values are corrupted"
        )
    return (top_total[None, :] / t_treated[:, None]) / (
        bottom_total[None, :] / t_control[:, None]
    )


def _t_levels(spec: TSpec, levels: int) -> np.ndarray:
    values = np.full(levels, spec.zeta)
    values[0] = 1.0
    return values


# -------------------------------------------------- table-facing (enumeration)


def weight_profile_from_tables(spec, dgp, target: CrossWorldTarget) -> np.ndarray:
    """Evaluate the (levels, points) weight profile on exact nuisance tables.

    Used by the enumeration oracle so that population sensitivity values are
    computed from the same weight algebra that estimation uses, while the
    reference truths come from latent potential-value tables that never touch
    this code.
    """
    t = dgp.tables
    if isinstance(spec, XiSpec):
        if spec.mode != dgp.monotonicity:
            raise ConfigError(
                "sensitivity spec and generating process disagree on the "
                "monotonicity mode"
            )
        profiles = _xi_profiles(
            spec, t.p(1, 1), t.p(0, 1), t.p(1, 0), t.p(0, 0),
            t.r[1, 1], t.r[0, 0],
        )
        return _xi_weight_from_profiles(
            profiles, target.stratum, (target.z, target.z_prime)
        )
    if isinstance(spec, TSpec):
        if (target.z, target.z_prime) != (1, 0):
            raise UnsupportedTarget(
                "the mean-ratio framework corrects only the treated-arm "
                "outcome under the control-arm mediator law"
            )
        t_vals = _t_levels(spec, t.n_levels())
        return _rho_from_level_ratios(
            t_vals, t_vals,
            t.r[1, target.stratum.d1], t.r[0, target.stratum.d0],
        )
    raise ConfigError(f"unknown sensitivity spec type {type(spec).__name__}")


# ----------------------------------------------------- bundle-facing weights


def _require_discrete(bundle) -> int:
    if not bundle.mediator_kind.is_discrete:
        raise ConfigError(
            "sensitivity analysis requires a mediator with finite support"
        )
    return len(bundle.mediator_kind.levels)


def _stacked_pmf(bundle, z: int, d: int, rows: np.ndarray, levels: int) -> np.ndarray:
    return np.vstack([bundle.r(z, d, m, rows) for m in range(levels)])


def _bundle_xi_profiles(spec: XiSpec, bundle, rows: np.ndarray) -> SimpleNamespace:
    if spec.mode != bundle.monotonicity:
        raise ConfigError(
            "sensitivity spec and fitted models disagree on the "
            "monotonicity mode"
        )
    levels = _require_discrete(bundle)
    return _xi_profiles(
        spec,
        bundle.p(1, 1, rows),
        bundle.p(0, 1, rows),
        bundle.p(1, 0, rows),
        bundle.p(0, 0, rows),
        _stacked_pmf(bundle, 1, 1, rows, levels),
        _stacked_pmf(bundle, 0, 0, rows, levels),
    )


def xi_zero_level(spec: XiSpec, bundle, rows=None) -> tuple[np.ndarray, np.ndarray]:
    """Implied level-zero confounding ratios at each requested row."""
    if rows is None:
        rows = np.arange(bundle.n_rows())
    profiles = _bundle_xi_profiles(spec, bundle, rows)
    return profiles.xi_m1[0], profiles.xi_m0[0]


def sensitivity_weight_pi(
    spec: XiSpec, bundle, target: CrossWorldTarget, rows=None
) -> np.ndarray:
    """Stratum-exchangeability weight profile, shape (levels, rows)."""
    if rows is None:
        rows = np.arange(bundle.n_rows())
    if spec.mode == Monotonicity.STRONG and target.stratum == ALWAYS_TAKERS:
        raise UnsupportedTarget(
            "always-takers do not exist under strong monotonicity"
        )
    profiles = _bundle_xi_profiles(spec, bundle, rows)
    return _xi_weight_from_profiles(
        profiles, target.stratum, (target.z, target.z_prime)
    )


def rho_weight(spec: TSpec, bundle, stratum: Stratum, rows=None) -> np.ndarray:
    """Mean-ratio weight profile for the (1,0) arm pair, shape (levels, rows)."""
    if rows is None:
        rows = np.arange(bundle.n_rows())
    levels = _require_discrete(bundle)
    t_vals = _t_levels(spec, levels)
    return _rho_from_level_ratios(
        t_vals, t_vals,
        _stacked_pmf(bundle, 1, stratum.d1, rows, levels),
        _stacked_pmf(bundle, 0, stratum.d0, rows, levels),
    )


# ------------------------------------------------------- sample estimators


def _score_mean_ratio(comps) -> float:
    from .errors import EmptyStratumEstimate

    denom = float(comps.delta.mean())
    if denom <= 0:
        raise EmptyStratumEstimate(
            f"proportion score for stratum {comps.target.stratum.label} has "
            f"nonpositive mean {denom:.3e}"
        )
    return float(comps.psi.mean() / denom)


def theta_mr_xi(data, bundle, spec: XiSpec, target: CrossWorldTarget) -> float:
    """Bias-corrected multiply robust stratum mean under the assumed ratios."""
    from . import estimators

    profile = sensitivity_weight_pi(spec, bundle, target)
    return _score_mean_ratio(
        estimators.eif_components(data, bundle, target, weight_profile=profile)
    )


def theta_mr_t(data, bundle, spec: TSpec, stratum: Stratum) -> float:
    """Bias-corrected treated-arm mean under the control mediator law."""
    from . import estimators

    target = CrossWorldTarget(z=1, z_prime=0, stratum=stratum)
    profile = rho_weight(spec, bundle, stratum)
    return _score_mean_ratio(
        estimators.eif_components(data, bundle, target, weight_profile=profile)
    )


def _corrected_thetas(data, bundle, spec, stratum: Stratum) -> dict[str, float]:
    """The three stratum means with the correction applied where it belongs."""
    from . import estimators

    out: dict[str, float] = {}
    for name, arms in (("11", (1, 1)), ("10", (1, 0)), ("00", (0, 0))):
        target = CrossWorldTarget(z=arms[0], z_prime=arms[1], stratum=stratum)
        if isinstance(spec, XiSpec):
            out[name] = theta_mr_xi(data, bundle, spec, target)
        elif isinstance(spec, TSpec):
            if arms == (1, 0):
                out[name] = theta_mr_t(data, bundle, spec, stratum)
            else:
                out[name] = _score_mean_ratio(
                    estimators.eif_components(data, bundle, target)
                )
        else:
            raise ConfigError(
                f"unknown sensitivity spec type {type(spec).__name__}"
            )
    return out


def _effect_from_thetas(thetas: dict[str, float], effect: str, scale: str) -> float:
    pairs = {"pnie": ("11", "10"), "pnde": ("10", "00"), "pce": ("11", "00")}
    try:
        hi, lo = pairs[effect]
    except KeyError:
        raise ConfigError(
            f"unknown effect {effect!r}; expected one of {sorted(pairs)}"
        ) from None
    if scale == "difference":
        return thetas[hi] - thetas[lo]
    if scale == "ratio":
        if abs(thetas[lo]) < 1e-300:
            raise DivisionByZero(
                f"ratio-scale {effect} undefined: the reference mean is zero"
            )
        return thetas[hi] / thetas[lo]
    raise ConfigError(f"unknown scale {scale!r}; expected difference or ratio")


def _spec_columns(spec) -> dict[str, float]:
    if isinstance(spec, XiSpec):
        return {
            "lambda_m1": spec.lambda_m1,
            "lambda_m0": spec.lambda_m0,
            "lambda_y1": spec.lambda_y1,
            "lambda_y0": spec.lambda_y0,
        }
    return {"zeta": spec.zeta}


def sensitivity_grid(
    data,
    bundle,
    spec_grid,
    effect: str,
    stratum: Stratum,
    scale: str = "difference",
    inference=None,
) -> pd.DataFrame:
    """One corrected effect estimate per grid point, with tipping flags.

    Failed points are recorded in the ``error`` column and the run continues.
    When an inference configuration is supplied each point gets a resampled
    confidence interval and rows are flagged where the interval's coverage of
    the null value (0 on the difference scale, 1 on the ratio scale) changes
    relative to the previous successful point.
    """
    if len(spec_grid) == 0:
        raise ConfigError("sensitivity grid is empty")
    null_value = 0.0 if scale == "difference" else 1.0
    rows = []
    previous_covers = None
    for spec in spec_grid:
        record: dict[str, object] = dict(_spec_columns(spec))
        record.update(
            {"effect": effect, "stratum": stratum.label, "scale": scale,
             "estimate": np.nan, "ci_low": np.nan, "ci_high": np.nan,
             "tipping_point": False, "error": ""}
        )
        try:
            thetas = _corrected_thetas(data, bundle, spec, stratum)
            record["estimate"] = _effect_from_thetas(thetas, effect, scale)
            if inference is not None:
                from . import inference as inference_mod

                def statistic(resampled, fitted):
                    t = _corrected_thetas(resampled, fitted, spec, stratum)
                    return _effect_from_thetas(t, effect, scale)

                interval = inference_mod.bootstrap_interval(
                    data, statistic, inference
                )
                record["ci_low"] = interval.low
                record["ci_high"] = interval.high
                covers = bool(interval.low <= null_value <= interval.high)
                if previous_covers is not None and covers != previous_covers:
                    record["tipping_point"] = True
                previous_covers = covers
        except EstimationError as err:
            record["error"] = f"{type(err).__name__}: {err}"
        rows.append(record)
    return pd.DataFrame(rows)

"""Exact enumeration over fully specified finite data-generating processes.

Every identity the estimators rely on is certified here by summing over the
complete discrete lattice (covariate point, treatment arm, event, mediator
level), with the outcome entering only through its conditional mean. The
evaluators accept working nuisance tables separate from the generating
tables, so robustness claims can be checked by perturbing one nuisance at a
time while the data law stays fixed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import yaml

from .core import (
    ALWAYS_TAKERS,
    COMPLIERS,
    NEVER_TAKERS,
    CrossWorldTarget,
    Monotonicity,
    Stratum,
    strata_for_mode,
)
from .errors import InvalidDgp

_PMF_TOL = 1e-12


@dataclass(frozen=True)
class NuisanceTables:
    """Nuisance values tabulated on a finite covariate support.

    ``pi1[i]`` is P(Z=1 | x_i); ``p1[z, i]`` is P(D=1 | Z=z, x_i);
    ``r[z, d, m, i]`` is the mediator pmf and ``mu[z, d, m, i]`` the outcome
    mean in cell (z, d) at level m. A tables object can describe either the
    generating law or a deliberately wrong working model.
    """

    pi1: np.ndarray
    p1: np.ndarray
    r: np.ndarray
    mu: np.ndarray

    def pi(self, z: int) -> np.ndarray:
        return self.pi1 if z == 1 else 1.0 - self.pi1

    def p(self, z: int, d: int) -> np.ndarray:
        return self.p1[z] if d == 1 else 1.0 - self.p1[z]

    def n_points(self) -> int:
        return self.pi1.shape[0]

    def n_levels(self) -> int:
        return self.r.shape[2]

    def score(self, stratum: Stratum) -> np.ndarray:
        z_star, d_star = stratum.companion
        out = self.p(z_star, d_star)
        if stratum.k:
            out = out - self.p(0, 1)
        return out

    def eta(self, target: CrossWorldTarget) -> np.ndarray:
        mu_arm = self.mu[target.z, target.d_z]
        r_arm = self.r[target.z_prime, target.d_z_prime]
        return np.einsum("mi,mi->i", mu_arm, r_arm)


@dataclass(frozen=True)
class DiscreteDgp:
    """A finite-support generating process plus optional latent structure."""

    x_points: np.ndarray
    x_probs: np.ndarray
    tables: NuisanceTables
    monotonicity: Monotonicity
    latent: "LatentXi | LatentT | None" = None

    def __post_init__(self):
        _validate_dgp(self)

    @property
    def m_max(self) -> int:
        return self.tables.n_levels() - 1

    def strata(self) -> list[Stratum]:
        return strata_for_mode(self.monotonicity)


def _validate_dgp(dgp: DiscreteDgp) -> None:
    t = dgp.tables
    n = t.n_points()
    if dgp.x_probs.shape != (n,) or dgp.x_points.shape[0] != n:
        raise InvalidDgp("covariate support and probability shapes disagree")
    if abs(float(dgp.x_probs.sum()) - 1.0) > _PMF_TOL or np.any(dgp.x_probs <= 0):
        raise InvalidDgp("covariate probabilities must be positive and sum to 1")
    if np.any(t.pi1 <= 0) or np.any(t.pi1 >= 1):
        raise InvalidDgp("treatment probabilities must lie strictly inside (0, 1)")
    if np.any(t.p1 < 0) or np.any(t.p1 > 1):
        raise InvalidDgp("event probabilities must lie in [0, 1]")
    sums = t.r.sum(axis=2)
    if np.max(np.abs(sums - 1.0)) > _PMF_TOL:
        raise InvalidDgp("a mediator pmf does not sum to 1")
    if np.any(t.r <= 0):
        raise InvalidDgp("mediator pmfs must be strictly positive at every level")
    if dgp.monotonicity == Monotonicity.STRONG:
        if np.any(t.p1[0] != 0.0):
            raise InvalidDgp("strong monotonicity requires a zero event rate "
                             "in the control arm")
        if np.any(t.p1[1] <= 0) or np.any(t.p1[1] >= 1):
            raise InvalidDgp("treated-arm event probability must be in (0, 1)")
    else:
        if np.any(t.p1[1] < t.p1[0]):
            raise InvalidDgp("monotonicity ordering violated: the treated-arm "
                             "event rate falls below the control arm somewhere")
        for stratum in strata_for_mode(Monotonicity.STANDARD):
            if np.any(t.score(stratum) <= 0):
                raise InvalidDgp(
                    f"stratum {stratum.label} has zero or negative mass "
                    "at some covariate point"
                )


# ----------------------------------------------------------- latent variants


@dataclass(frozen=True)
class LatentXi:
    """Stratum-level potential laws with a principal-ignorability violation.

    ``stratum_probs[label][i]`` is P(U = label | x_i); ``mediator_pmf[z, label]``
    is the pmf of the potential mediator under arm z within the stratum, and
    ``outcome_mean[z, label][m, i]`` is the mean potential outcome at arm z
    and mediator level m, free of the realized mediator (so the
    mediator-ignorability assumption holds while stratum exchangeability is
    broken).
    """

    stratum_probs: Mapping[str, np.ndarray]
    mediator_pmf: Mapping[tuple[int, str], np.ndarray]
    outcome_mean: Mapping[tuple[int, str], np.ndarray]


@dataclass(frozen=True)
class LatentT:
    """Potential-outcome means tied to the realized mediator.

    Strata share the mediator laws ``mediator_pmf[z]`` (so principal
    ignorability holds) and the two potential mediators are independent given
    x. The treated-arm potential outcome has mean
    ``y1_base[m, i] * y1_factor[1][j] * y1_factor[0][j0]`` given realized
    mediators M1 = j and M0 = j0; the factors are normalized to 1 at level 0,
    making them exactly the mean-ratio confounding functions for each arm.
    The control-arm outcome mean ``y0_mean[m, i]`` carries no violation.
    """

    stratum_probs: Mapping[str, np.ndarray]
    mediator_pmf: Mapping[int, np.ndarray]
    y1_base: np.ndarray
    y1_factor: Mapping[int, np.ndarray]
    y0_mean: np.ndarray


def _strata_in_cell(z: int, d: int, mode: Monotonicity) -> list[Stratum]:
    return [s for s in strata_for_mode(mode) if s.d_for_arm(z) == d]


def dgp_from_latent_xi(
    x_points: np.ndarray,
    x_probs: np.ndarray,
    pi1: np.ndarray,
    latent: LatentXi,
    monotonicity: Monotonicity = Monotonicity.STANDARD,
) -> DiscreteDgp:
    """Derive the observed-data tables implied by a stratum-level law."""
    strata = strata_for_mode(monotonicity)
    labels = {s.label for s in strata}
    if set(latent.stratum_probs) != labels:
        raise InvalidDgp(f"stratum probabilities must cover exactly {sorted(labels)}")
    total = sum(latent.stratum_probs[lab] for lab in labels)
    if np.max(np.abs(total - 1.0)) > _PMF_TOL:
        raise InvalidDgp("stratum probabilities must sum to 1 at every point")

    n = x_probs.shape[0]
    some_pmf = next(iter(latent.mediator_pmf.values()))
    levels = some_pmf.shape[0]
    p1 = np.zeros((2, n))
    r = np.zeros((2, 2, levels, n))
    mu = np.zeros((2, 2, levels, n))
    for z in (0, 1):
        p1[z] = sum(
            latent.stratum_probs[s.label]
            for s in strata
            if s.d_for_arm(z) == 1
        )
        for d in (0, 1):
            members = _strata_in_cell(z, d, monotonicity)
            if not members:
                r[z, d] = 1.0 / levels  # structurally empty cell, any valid pmf
                continue
            cell = sum(latent.stratum_probs[s.label] for s in members)
            mix = np.zeros((levels, n))
            weighted_mean = np.zeros((levels, n))
            for s in members:
                w = latent.stratum_probs[s.label] * latent.mediator_pmf[(z, s.label)]
                mix += w
                weighted_mean += w * latent.outcome_mean[(z, s.label)]
            r[z, d] = mix / cell
            mu[z, d] = weighted_mean / mix
    tables = NuisanceTables(pi1=pi1, p1=p1, r=r, mu=mu)
    return DiscreteDgp(
        x_points=x_points,
        x_probs=x_probs,
        tables=tables,
        monotonicity=monotonicity,
        latent=latent,
    )


def dgp_from_latent_t(
    x_points: np.ndarray,
    x_probs: np.ndarray,
    pi1: np.ndarray,
    latent: LatentT,
    monotonicity: Monotonicity = Monotonicity.STANDARD,
) -> DiscreteDgp:
    strata = strata_for_mode(monotonicity)
    labels = {s.label for s in strata}
    if set(latent.stratum_probs) != labels:
        raise InvalidDgp(f"stratum probabilities must cover exactly {sorted(labels)}")
    for z in (0, 1):
        if np.any(latent.y1_factor[z][0] != 1.0):
            raise InvalidDgp("mean-ratio factors must equal 1 at mediator level 0")

    n = x_probs.shape[0]
    levels = latent.mediator_pmf[1].shape[0]
    p1 = np.zeros((2, n))
    for z in (0, 1):
        p1[z] = sum(
            latent.stratum_probs[s.label] for s in strata if s.d_for_arm(z) == 1
        )
    r = np.zeros((2, 2, levels, n))
    mu = np.zeros((2, 2, levels, n))
    # mean of the control-arm factor over the control mediator law
    factor0_mean = np.einsum(
        "mi,mi->i", latent.y1_factor[0], latent.mediator_pmf[0]
    )
    for z in (0, 1):
        for d in (0, 1):
            r[z, d] = latent.mediator_pmf[z]
            if z == 1:
                mu[z, d] = latent.y1_base * latent.y1_factor[1] * factor0_mean
            else:
                mu[z, d] = latent.y0_mean
    tables = NuisanceTables(pi1=pi1, p1=p1, r=r, mu=mu)
    return DiscreteDgp(
        x_points=x_points,
        x_probs=x_probs,
        tables=tables,
        monotonicity=monotonicity,
        latent=latent,
    )


def oracle_coupled_theta(dgp: DiscreteDgp, target: CrossWorldTarget) -> float:
    """Stratum truth straight from the latent potential-value tables.

    This is the reference side of every sensitivity certification: it never
    touches identification weights, only the latent laws and Bayes' rule for
    P(x | stratum).
    """
    if dgp.latent is None:
        raise InvalidDgp("this generating process carries no latent tables")
    lab = target.stratum.label
    probs = dgp.latent.stratum_probs[lab]
    x_weight = dgp.x_probs * probs
    x_weight = x_weight / x_weight.sum()
    if isinstance(dgp.latent, LatentXi):
        mean_z = dgp.latent.outcome_mean[(target.z, lab)]
        pmf_zp = dgp.latent.mediator_pmf[(target.z_prime, lab)]
        per_x = np.einsum("mi,mi->i", mean_z, pmf_zp)
        return float(per_x @ x_weight)
    lat: LatentT = dgp.latent
    if target.z == 1 and target.z_prime == 0:
        factor1_mean = np.einsum("mi,mi->i", lat.y1_factor[1], lat.mediator_pmf[1])
        per_x = np.einsum(
            "mi,mi->i", lat.y1_base * lat.y1_factor[0], lat.mediator_pmf[0]
        )
        return float((per_x * factor1_mean) @ x_weight)
    if target.z == 1 and target.z_prime == 1:
        factor0_mean = np.einsum("mi,mi->i", lat.y1_factor[0], lat.mediator_pmf[0])
        per_x = np.einsum(
            "mi,mi->i", lat.y1_base * lat.y1_factor[1], lat.mediator_pmf[1]
        )
        return float((per_x * factor0_mean) @ x_weight)
    if target.z == 0 and target.z_prime == 0:
        per_x = np.einsum("mi,mi->i", lat.y0_mean, lat.mediator_pmf[0])
        return float(per_x @ x_weight)
    raise InvalidDgp(f"no latent truth is defined for arm pair {target.label}")


# ------------------------------------------------------------- identification


def oracle_stratum_proportion(dgp: DiscreteDgp, stratum: Stratum) -> float:
    return float(dgp.tables.score(stratum) @ dgp.x_probs)


def oracle_theta(dgp: DiscreteDgp, target: CrossWorldTarget) -> float:
    """Identified estimand value: covariate-weighted cross-world outcome mean."""
    t = dgp.tables
    score = t.score(target.stratum)
    e_marginal = float(score @ dgp.x_probs)
    return float((score * t.eta(target)) @ dgp.x_probs) / e_marginal


def oracle_p_marginal_dr(
    dgp: DiscreteDgp, z: int, d: int, tables: NuisanceTables | None = None
) -> float:
    """Population value of the augmented marginal cell probability."""
    true = dgp.tables
    w = true if tables is None else tables
    aug = true.pi(z) * (true.p(z, d) - w.p(z, d)) / w.pi(z) + w.p(z, d)
    return float(aug @ dgp.x_probs)


def _dr_denominator(
    dgp: DiscreteDgp, target: CrossWorldTarget, tables: NuisanceTables
) -> float:
    z_star, d_star = target.stratum.companion
    value = oracle_p_marginal_dr(dgp, z_star, d_star, tables)
    if target.stratum.k:
        value -= oracle_p_marginal_dr(dgp, 0, 1, tables)
    return value


def oracle_moment_expectation(
    dgp: DiscreteDgp,
    target: CrossWorldTarget,
    form: str,
    tables: NuisanceTables | None = None,
) -> float:
    """Exact population value of one of the four single-robust moments.

    The observed outcome is replaced by its conditional mean, which is exact
    because each moment is linear in Y given (Z, D, M, X).
    """
    true = dgp.tables
    w = true if tables is None else tables
    z, zp = target.z, target.z_prime
    dz, dzp = target.d_z, target.d_z_prime
    stratum = target.stratum
    z_star, d_star = stratum.companion
    k = stratum.k
    denom = _dr_denominator(dgp, target, w)
    score_w = w.score(stratum)

    if form == "a":
        ratio = w.r[zp, dzp] / w.r[z, dz]
        inner = np.einsum("mi,mi->i", true.r[z, dz] * ratio, true.mu[z, dz])
        cell = true.pi(z) * true.p(z, dz)
        per_x = score_w * cell / (w.p(z, dz) * w.pi(z)) * inner
        return float(per_x @ dgp.x_probs) / denom
    if form == "b":
        eta_w = w.eta(target)
        weight = true.pi(z_star) * true.p(z_star, d_star) / w.pi(z_star)
        if k:
            weight = weight - k * true.pi(0) * true.p(0, 1) / w.pi(0)
        return float((weight * eta_w) @ dgp.x_probs) / denom
    if form == "c":
        inner = np.einsum("mi,mi->i", true.r[zp, dzp], w.mu[z, dz])
        cell = true.pi(zp) * true.p(zp, dzp)
        per_x = score_w * cell / (w.p(zp, dzp) * w.pi(zp)) * inner
        return float(per_x @ dgp.x_probs) / denom
    if form == "d":
        return float((score_w * w.eta(target)) @ dgp.x_probs) / denom
    raise ValueError(f"unknown moment form {form!r}")


def oracle_psi_mean(
    dgp: DiscreteDgp,
    target: CrossWorldTarget,
    tables: NuisanceTables | None = None,
) -> float:
    """Population mean of the four-term influence numerator."""
    true = dgp.tables
    w = true if tables is None else tables
    z, zp = target.z, target.z_prime
    dz, dzp = target.d_z, target.d_z_prime
    stratum = target.stratum
    z_star, d_star = stratum.companion
    k = stratum.k
    eta_w = w.eta(target)
    score_w = w.score(stratum)

    # term 1: event-residual weight times the cross-world regression
    t1 = np.zeros(true.n_points())
    for z_obs, d_obs in itertools.product((0, 1), repeat=2):
        cell = true.pi(z_obs) * true.p(z_obs, d_obs)
        a = 0.0
        if z_obs == z_star:
            a = (float(d_obs == d_star) - w.p(z_star, d_star)) / w.pi(z_star)
        if k and z_obs == 0:
            a = a - k * (float(d_obs) - w.p(0, 1)) / w.pi(0)
        t1 = t1 + cell * a * eta_w

    # term 2: outcome residual in the (z, d_z) cell, reweighted to arm z'
    ratio = w.r[zp, dzp] / w.r[z, dz]
    resid = true.mu[z, dz] - w.mu[z, dz]
    inner2 = np.einsum("mi,mi->i", true.r[z, dz] * ratio, resid)
    t2 = score_w * true.pi(z) * true.p(z, dz) / (w.p(z, dz) * w.pi(z)) * inner2

    # term 3: regression gap in the (z', d_{z'}) cell
    inner3 = np.einsum("mi,mi->i", true.r[zp, dzp], w.mu[z, dz]) - eta_w
    t3 = score_w * true.pi(zp) * true.p(zp, dzp) / (w.p(zp, dzp) * w.pi(zp)) * inner3

    t4 = score_w * eta_w
    return float((t1 + t2 + t3 + t4) @ dgp.x_probs)


def oracle_delta_mean(
    dgp: DiscreteDgp,
    target: CrossWorldTarget,
    tables: NuisanceTables | None = None,
) -> float:
    """Population mean of the stratum-proportion score; equals the stratum
    proportion whenever the treatment or event tables are correct."""
    true = dgp.tables
    w = true if tables is None else tables
    stratum = target.stratum
    z_star, d_star = stratum.companion
    k = stratum.k
    resid = true.pi(z_star) * (true.p(z_star, d_star) - w.p(z_star, d_star))
    value = resid / w.pi(z_star) + w.p(z_star, d_star)
    if k:
        resid0 = true.pi(0) * (true.p(0, 1) - w.p(0, 1))
        value = value - k * (resid0 / w.pi(0) + w.p(0, 1))
    return float(value @ dgp.x_probs)


def oracle_theta_mr(
    dgp: DiscreteDgp,
    target: CrossWorldTarget,
    tables: NuisanceTables | None = None,
) -> float:
    return oracle_psi_mean(dgp, target, tables) / oracle_delta_mean(
        dgp, target, tables
    )


def oracle_eif_mean(
    dgp: DiscreteDgp,
    target: CrossWorldTarget,
    theta_input: float,
    tables: NuisanceTables | None = None,
) -> float:
    """E[(psi - theta * delta)] scaled by the stratum proportion."""
    psi = oracle_psi_mean(dgp, target, tables)
    delta = oracle_delta_mean(dgp, target, tables)
    scale = _dr_denominator(dgp, target, dgp.tables if tables is None else tables)
    return (psi - theta_input * delta) / scale


def oracle_sensitivity_truth(
    dgp: DiscreteDgp, spec, target: CrossWorldTarget
) -> float:
    """Identified estimand under an assumed ignorability violation.

    Evaluates the weighted cross-world formula with the confounding weights
    implied by ``spec`` (a principal-ignorability spec or a
    mediator-ignorability spec) on the observed-data tables. On a generating
    process built with a matching latent violation this reproduces
    ``oracle_coupled_theta`` exactly; with identity weights it reduces to
    ``oracle_theta``.
    """
    from . import sensitivity

    t = dgp.tables
    weights = sensitivity.weight_profile_from_tables(spec, dgp, target)
    mu_arm = t.mu[target.z, target.d_z]
    r_arm = t.r[target.z_prime, target.d_z_prime]
    per_x = np.einsum("mi,mi->i", weights * mu_arm, r_arm)
    score = t.score(target.stratum)
    e_marginal = float(score @ dgp.x_probs)
    return float((score * per_x) @ dgp.x_probs) / e_marginal


def sample_dataset(dgp: DiscreteDgp, n: int, seed: int,
                   noise_sd: float = 1.0) -> "Dataset":
    """Draw a finite observed-data sample from the process.

    Outcomes are the tabulated conditional means plus Gaussian noise, which
    preserves every population value the enumeration computes (they depend on
    the outcome only through its mean). Used for sample-level certification
    of the estimators against enumerated truths.
    """
    from .core import Dataset, MediatorKind, _tabulate_cells

    rng = np.random.default_rng(seed)
    t = dgp.tables
    idx = rng.choice(t.n_points(), size=n, p=dgp.x_probs)
    z = (rng.random(n) < t.pi1[idx]).astype(float)
    d = (rng.random(n) < t.p1[z.astype(int), idx]).astype(float)
    pmf = t.r[z.astype(int), d.astype(int), :, idx]
    cums = np.cumsum(pmf, axis=1)
    m = (rng.random(n)[:, None] > cums).sum(axis=1).astype(float)
    y = t.mu[z.astype(int), d.astype(int), m.astype(int), idx]
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(n)
    m_max = dgp.m_max
    kind = MediatorKind.binary() if m_max == 1 else MediatorKind.categorical(m_max)
    return Dataset(
        n=n, x=dgp.x_points[idx].copy(), z=z, d=d, m=m, y=y,
        mediator_kind=kind, monotonicity=dgp.monotonicity,
        cell_counts=_tabulate_cells(z, d),
    )


# ------------------------------------------------------------- perturbations


def _shift_logit(p: np.ndarray, amount: float) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(np.log(p / (1.0 - p)) + amount)))


def perturbed_tables(dgp: DiscreteDgp, which: str) -> NuisanceTables:
    """Return working tables with exactly one nuisance made wrong.

    The distortions are deterministic and keep each table inside its valid
    range (and the event ordering intact), so population evaluators exercise
    the robustness algebra rather than boundary handling.
    """
    t = dgp.tables
    pi1, p1, r, mu = t.pi1, t.p1, t.r, t.mu
    if which == "pi":
        pi1 = _shift_logit(pi1, 0.6)
    elif which == "p":
        p1 = p1.copy()
        p1[1] = _shift_logit(p1[1], 0.5)
        if dgp.monotonicity == Monotonicity.STANDARD:
            p1[0] = _shift_logit(p1[0], -0.5)
    elif which == "r":
        levels = t.n_levels()
        r = 0.65 * r + 0.35 / levels
    elif which == "mu":
        grid = np.arange(t.n_levels(), dtype=float)[None, None, :, None]
        mu = 1.15 * mu + 0.8 + 0.3 * grid
    else:
        raise ValueError(f"unknown nuisance name {which!r}")
    return NuisanceTables(pi1=pi1, p1=p1, r=r, mu=mu)


# ------------------------------------------------------------------- fixture


def dgp_from_dict(payload: dict) -> DiscreteDgp:
    try:
        mode = Monotonicity(payload["monotonicity"])
        m_max = int(payload["m_max"])
        points = payload["points"]
        levels = m_max + 1
        n = len(points)
        x_dim = len(points[0]["x"])
        x_points = np.zeros((n, x_dim))
        x_probs = np.zeros(n)
        pi1 = np.zeros(n)
        p1 = np.zeros((2, n))
        r = np.zeros((2, 2, levels, n))
        mu = np.zeros((2, 2, levels, n))
        for i, pt in enumerate(points):
            x_points[i] = pt["x"]
            x_probs[i] = pt["prob"]
            pi1[i] = pt["pi1"]
            p1[0, i] = pt["p_event"]["z0"]
            p1[1, i] = pt["p_event"]["z1"]
            for z, d in itertools.product((0, 1), repeat=2):
                key = f"z{z}d{d}"
                r[z, d, :, i] = pt["mediator_pmf"][key]
                mu[z, d, :, i] = pt["outcome_mean"][key]
    except (KeyError, TypeError, ValueError, IndexError) as err:
        raise InvalidDgp(f"malformed generating-process description: {err}") from None
    tables = NuisanceTables(pi1=pi1, p1=p1, r=r, mu=mu)
    return DiscreteDgp(
        x_points=x_points, x_probs=x_probs, tables=tables, monotonicity=mode
    )


def load_dgp(path) -> DiscreteDgp:
    with open(path, "r") as fh:
        payload = yaml.safe_load(fh)
    if not isinstance(payload, dict):
        raise InvalidDgp("fixture file does not contain a mapping")
    return dgp_from_dict(payload)


def load_reference_dgp() -> tuple[DiscreteDgp, dict]:
    """The shipped two-point fixture and its frozen golden values."""
    from importlib import resources

    ref = resources.files("stratmed").joinpath("fixtures/reference_dgp.yaml")
    payload = yaml.safe_load(ref.read_text())
    return dgp_from_dict(payload), dict(payload.get("golden", {}))


# ---------------------------------------------------------------- certifier


def certification_report(dgp: DiscreteDgp, tol: float = 1e-10) -> list[dict]:
    """Run every population identity on one generating process.

    Returns one record per check with the achieved discrepancy, for the
    command-line certification path and the acceptance suite.
    """
    checks: list[dict] = []

    def add(name: str, err: float, bound: float = tol) -> None:
        checks.append(
            {"check": name, "error": float(abs(err)), "tol": bound,
             "passed": bool(abs(err) <= bound)}
        )

    targets = [
        CrossWorldTarget(z=z, z_prime=zp, stratum=s)
        for s in dgp.strata()
        for (z, zp) in ((1, 1), (1, 0), (0, 0))
    ]
    for target in targets:
        theta = oracle_theta(dgp, target)
        values = [
            oracle_moment_expectation(dgp, target, form) for form in "abcd"
        ]
        spread = max(values) - min(values)
        add(f"moment forms agree [{target.label}]", spread)
        add(
            f"moment forms match estimand [{target.label}]",
            max(abs(v - theta) for v in values),
        )
        add(
            f"influence mean zero at truth [{target.label}]",
            oracle_eif_mean(dgp, target, theta),
        )
        add(
            f"proportion score mean [{target.label}]",
            oracle_delta_mean(dgp, target)
            - oracle_stratum_proportion(dgp, target.stratum),
            1e-12,
        )
        for which in ("pi", "p", "r", "mu"):
            wrong = perturbed_tables(dgp, which)
            add(
                f"mr recovery with wrong {which} [{target.label}]",
                oracle_theta_mr(dgp, target, wrong) - theta,
            )
    for z, d in itertools.product((0, 1), repeat=2):
        if dgp.monotonicity == Monotonicity.STRONG and z == 0 and d == 1:
            continue
        truth = float(dgp.tables.p(z, d) @ dgp.x_probs)
        for which in ("pi", "p"):
            wrong = perturbed_tables(dgp, which)
            add(
                f"augmented cell probability with wrong {which} [z={z} d={d}]",
                oracle_p_marginal_dr(dgp, z, d, wrong) - truth,
            )
    return checks

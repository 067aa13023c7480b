"""V-fold cross-fitting, pluggable learners, and the nonparametric estimator.

The learner path reuses :class:`~stratmed.nuisance.NuisanceBundle` with
learner-backed components, so the clipping policy and diagnostics counters
are shared with the parametric path. Model selection is a discrete pick of
the inner-CV loss minimizer, per nuisance role and per fold; each unit's
scores are then evaluated under the bundle trained without its fold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import estimators, glm, nuisance
from .core import CrossWorldTarget, Dataset, Monotonicity, strata_for_mode
from .errors import (
    BadFoldCount,
    ConfigError,
    DivisionByZero,
    EmptyCell,
    EmptyStratumEstimate,
    EstimationError,
    FitError,
)
from .nuisance import DEFAULT_CLIP, ModelSpec, _with_intercept

DEFAULT_FOLDS = 5
_BOOST_BINS = 63
_LEAF_RIDGE = 1.0
_PROB_FLOOR = 1e-6


# ------------------------------------------------------------------ fold plan


@dataclass(frozen=True)
class FoldPlan:
    """Seeded assignment of every row to one of v folds, sizes within 1."""

    assignments: np.ndarray
    v: int
    seed: int

    def __post_init__(self):
        self.assignments.setflags(write=False)

    def rows_in(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def rows_out(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def partition(n: int, v: int, seed: int) -> FoldPlan:
    """Shuffle the row indices, then deal them round-robin into v folds."""
    if not (2 <= v <= n):
        raise BadFoldCount(f"need 2 <= folds <= n rows, got v={v} with n={n}")
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % v + 1
    return FoldPlan(assignments=assignments, v=v, seed=seed)


# ------------------------------------------------------------------- learners


class _GlmModel:
    def __init__(self, fit: glm.GlmFit):
        self.fit = fit

    def predict(self, design: np.ndarray) -> np.ndarray:
        return glm.predict_mean(self.fit, design)


@dataclass(frozen=True)
class GlmBaseline:
    """The parametric working models, packaged as a learner candidate."""

    name: str = "GlmBaseline"

    def fit_binary(self, design: np.ndarray, response: np.ndarray):
        return _GlmModel(glm.fit_logistic(design, response))

    def fit_mean(self, design: np.ndarray, response: np.ndarray):
        values = np.unique(response)
        if len(values) <= 2 and np.isin(values, (0.0, 1.0)).all():
            return _GlmModel(glm.fit_logistic(design, response))
        return _GlmModel(glm.fit_linear(design, response))


class _BoostFit:
    """A fitted stump ensemble: bin edges plus per-tree split records."""

    def __init__(self, edges, trees, init, logistic):
        self.edges = edges
        self.trees = trees
        self.init = init
        self.logistic = logistic

    def _raw(self, design: np.ndarray) -> np.ndarray:
        codes = [
            np.searchsorted(self.edges[j], design[:, j], side="right")
            for j in range(design.shape[1])
        ]
        out = np.full(design.shape[0], self.init)
        for feature, boundary, left, right in self.trees:
            if feature < 0:
                out += left
            else:
                out += np.where(codes[feature] < boundary, left, right)
        return out

    def predict(self, design: np.ndarray) -> np.ndarray:
        raw = self._raw(design)
        if self.logistic:
            return 1.0 / (1.0 + np.exp(-raw))
        return raw


@dataclass(frozen=True)
class BoostedStumps:
    """Gradient-boosted depth-1 trees with Newton leaf values.

    Probabilities use log-loss, means use squared loss. Splits are found on
    per-feature quantile bins, so fitting is deterministic and linear in n.
    """

    trees: int = 200
    depth: int = 1
    shrinkage: float = 0.1

    def __post_init__(self):
        if self.depth != 1:
            raise ConfigError("only depth-1 stumps are implemented")
        if self.trees < 1 or not (0.0 < self.shrinkage <= 1.0):
            raise ConfigError(
                f"bad boosting knobs: trees={self.trees}, "
                f"shrinkage={self.shrinkage}"
            )

    @property
    def name(self) -> str:
        return f"BoostedStumps({self.trees},{self.shrinkage:g})"

    def fit_binary(self, design, response):
        return self._fit(design, response, logistic=True)

    def fit_mean(self, design, response):
        return self._fit(design, response, logistic=False)

    def _fit(self, design: np.ndarray, response: np.ndarray, logistic: bool):
        n, n_features = design.shape
        edges = []
        codes = []
        for j in range(n_features):
            col = design[:, j]
            qs = np.quantile(col, np.linspace(0, 1, _BOOST_BINS + 1)[1:-1])
            e = np.unique(qs)
            edges.append(e)
            codes.append(np.searchsorted(e, col, side="right"))
        if logistic:
            base = min(max(float(response.mean()), _PROB_FLOOR),
                       1.0 - _PROB_FLOOR)
            init = math.log(base / (1.0 - base))
        else:
            init = float(response.mean())
        score = np.full(n, init)
        records = []
        for _ in range(self.trees):
            if logistic:
                prob = 1.0 / (1.0 + np.exp(-score))
                grad = response - prob
                hess = prob * (1.0 - prob)
            else:
                grad = response - score
                hess = np.ones(n)
            g_all, h_all = float(grad.sum()), float(hess.sum())
            best = None
            for j in range(n_features):
                n_bins = edges[j].shape[0] + 1
                if n_bins < 2:
                    continue
                g_bin = np.bincount(codes[j], weights=grad, minlength=n_bins)
                h_bin = np.bincount(codes[j], weights=hess, minlength=n_bins)
                g_left = np.cumsum(g_bin)[:-1]
                h_left = np.cumsum(h_bin)[:-1]
                g_right = g_all - g_left
                h_right = h_all - h_left
                gain = (g_left ** 2 / (h_left + _LEAF_RIDGE)
                        + g_right ** 2 / (h_right + _LEAF_RIDGE))
                pick = int(np.argmax(gain))
                if best is None or gain[pick] > best[0]:
                    best = (float(gain[pick]), j, pick + 1,
                            g_left[pick], h_left[pick],
                            g_right[pick], h_right[pick])
            base_gain = g_all ** 2 / (h_all + _LEAF_RIDGE)
            if best is None or best[0] <= base_gain + 1e-12:
                step = g_all / (h_all + _LEAF_RIDGE)
                records.append((-1, 0, self.shrinkage * step, 0.0))
                score = score + self.shrinkage * step
                continue
            _, j, boundary, gl, hl, gr, hr = best
            left = self.shrinkage * gl / (hl + _LEAF_RIDGE)
            right = self.shrinkage * gr / (hr + _LEAF_RIDGE)
            records.append((j, boundary, left, right))
            score = score + np.where(codes[j] < boundary, left, right)
        return _BoostFit(edges, records, init, logistic)


class _KnnFit:
    def __init__(self, features, response, k, center, scale):
        self.features = features
        self.response = response
        self.k = k
        self.center = center
        self.scale = scale

    def predict(self, design: np.ndarray) -> np.ndarray:
        scaled = (design - self.center) / self.scale
        out = np.empty(design.shape[0])
        k = min(self.k, self.features.shape[0])
        for start in range(0, design.shape[0], 1024):
            block = scaled[start:start + 1024]
            dist = ((block[:, None, :] - self.features[None, :, :]) ** 2
                    ).sum(axis=2)
            nearest = np.argpartition(dist, k - 1, axis=1)[:, :k]
            out[start:start + 1024] = self.response[nearest].mean(axis=1)
        return out


@dataclass(frozen=True)
class KNearest:
    """k-nearest-neighbour averages on standardized features."""

    k: int = 25

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"neighbour count must be positive, got {self.k}")

    @property
    def name(self) -> str:
        return f"KNearest({self.k})"

    def _fit(self, design, response):
        center = design.mean(axis=0)
        scale = design.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return _KnnFit((design - center) / scale, response.astype(float),
                       self.k, center, scale)

    fit_binary = _fit
    fit_mean = _fit


@dataclass(frozen=True)
class LearnerSpec:
    """Candidate learners plus the selection rule applied per nuisance."""

    candidates: tuple = (GlmBaseline(),)
    selection: str = "DiscreteCvBest"
    inner_folds: int = 2

    def __post_init__(self):
        if len(self.candidates) < 1:
            raise ConfigError("learner spec needs at least one candidate")
        if self.selection != "DiscreteCvBest":
            raise ConfigError(
                f"unknown selection rule {self.selection!r}; only "
                "DiscreteCvBest is available"
            )
        if self.inner_folds < 2:
            raise ConfigError("candidate selection needs at least 2 inner folds")


# ------------------------------------------------------- learner components
# Mirror the parametric components' design layout exactly, so a GlmBaseline
# candidate reproduces the parametric bundle number for number.


class _LearnerTreatment:
    def __init__(self, model):
        self.model = model

    def prob(self, z: int, x: np.ndarray) -> np.ndarray:
        p1 = np.asarray(self.model.predict(_with_intercept(x)))
        return p1 if z == 1 else 1.0 - p1


class _LearnerEvent:
    def __init__(self, model, monotonicity: Monotonicity):
        self.model = model
        self.monotonicity = monotonicity

    def prob(self, z: int, d: int, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.monotonicity == Monotonicity.STRONG:
            if z == 0:
                return np.full(n, float(1 - d))
            p1 = np.asarray(self.model.predict(_with_intercept(x)))
        else:
            zcol = np.full(n, float(z))
            p1 = np.asarray(self.model.predict(_with_intercept(zcol, x)))
        return p1 if d == 1 else 1.0 - p1


class _LearnerMediator:
    """Sequential-split categorical pmf over learner-fitted split models."""

    def __init__(self, split_models: Sequence, m_max: int):
        self.split_models = list(split_models)
        self.m_max = m_max

    def _split_prob(self, j: int, z: int, d: int, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        design = _with_intercept(np.full(n, float(z)), np.full(n, float(d)), x)
        return np.asarray(self.split_models[j - 1].predict(design))

    def pmf(self, z: int, d: int, m: int, x: np.ndarray) -> np.ndarray:
        out = np.ones(x.shape[0])
        if m >= 1:
            out = out * self._split_prob(m, z, d, x)
        for j in range(max(m, 0) + 1, self.m_max + 1):
            out = out * (1.0 - self._split_prob(j, z, d, x))
        return out


class _LearnerOutcome:
    def __init__(self, model):
        self.model = model

    def mean(self, z: int, d: int, m, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        mcol = (np.full(n, float(m)) if np.ndim(m) == 0
                else np.asarray(m, dtype=float))
        design = _with_intercept(np.full(n, float(z)), np.full(n, float(d)),
                                 mcol, x)
        return np.asarray(self.model.predict(design))


# --------------------------------------------------------- candidate scoring


def _binary_loss(model, design, response) -> float:
    prob = np.clip(np.asarray(model.predict(design)), _PROB_FLOOR,
                   1.0 - _PROB_FLOOR)
    return float(-np.sum(response * np.log(prob)
                         + (1.0 - response) * np.log1p(-prob)))


def _mean_loss(model, design, response) -> float:
    return float(np.sum((response - np.asarray(model.predict(design))) ** 2))


def _inner_split(n: int, folds: int, seed: int) -> np.ndarray:
    if n < folds:
        raise EmptyCell(
            f"cannot split {n} training rows into {folds} selection folds"
        )
    return partition(n, folds, seed).assignments


def _select_candidate(spec: LearnerSpec, seed: int, fit_score) -> tuple:
    """Pick the candidate whose summed held-out loss is smallest.

    ``fit_score(candidate, train_local, valid_local)`` returns the loss of
    the candidate fitted on one local row set and scored on the other;
    candidates that fail to fit are skipped with an infinite loss.
    """
    if len(spec.candidates) == 1:
        return spec.candidates[0], {}
    losses = []
    for candidate in spec.candidates:
        total = 0.0
        try:
            for train_local, valid_local in fit_score.splits(seed):
                total += fit_score(candidate, train_local, valid_local)
        except (FitError, EmptyCell):
            total = math.inf
        losses.append(total)
    best = int(np.argmin(losses))
    if not math.isfinite(losses[best]):
        raise FitError("every learner candidate failed inner validation")
    report = {c.name: round(l, 6) if math.isfinite(l) else math.inf
              for c, l in zip(spec.candidates, losses)}
    return spec.candidates[best], report


class _RoleScorer:
    """Inner-CV fit/score loop for one nuisance role."""

    def __init__(self, rows: np.ndarray, inner_folds: int, fit_one, score_one):
        self.rows = rows
        self.inner_folds = inner_folds
        self.fit_one = fit_one
        self.score_one = score_one

    def splits(self, seed: int):
        assignments = _inner_split(self.rows.shape[0], self.inner_folds, seed)
        for fold in range(1, self.inner_folds + 1):
            valid = self.rows[assignments == fold]
            train = self.rows[assignments != fold]
            if train.size == 0 or valid.size == 0:
                raise EmptyCell("an inner selection fold is empty")
            yield train, valid

    def __call__(self, candidate, train_rows, valid_rows) -> float:
        fitted = self.fit_one(candidate, train_rows)
        return self.score_one(fitted, valid_rows)


def _role_seed(plan_seed: int, fold: int, role: str) -> int:
    ss = np.random.SeedSequence([plan_seed, fold, sum(map(ord, role))])
    return int(ss.generate_state(1)[0])


# ------------------------------------------------------------ fold bundles


def fit_fold_bundle(
    data: Dataset,
    fold_plan: FoldPlan,
    v: int,
    learner_spec: LearnerSpec,
    spec: Optional[ModelSpec] = None,
    clip: float = DEFAULT_CLIP,
) -> nuisance.NuisanceBundle:
    """Fit all four nuisances on the rows outside fold ``v``.

    The returned bundle is bound to the full-length feature matrices, so it
    can be evaluated at any rows; training never saw fold ``v``.
    """
    if not (1 <= v <= fold_plan.v):
        raise BadFoldCount(f"fold id {v} outside 1..{fold_plan.v}")
    if not data.mediator_kind.is_discrete:
        raise ConfigError(
            "cross-fitted estimation requires a mediator with finite support"
        )
    if spec is None:
        spec = ModelSpec.shared(data.x)
    train = fold_plan.rows_out(v)
    diagnostics: dict = {"fold": v}

    z = data.z.astype(float)
    d = data.d.astype(float)
    m = data.m.astype(np.int64)
    y = data.y.astype(float)

    # treatment ------------------------------------------------------------
    def fit_pi(candidate, rows):
        return candidate.fit_binary(_with_intercept(spec.pi[rows]), data.z[rows])

    def score_pi(fitted, rows):
        return _binary_loss(fitted, _with_intercept(spec.pi[rows]), data.z[rows])

    scorer = _RoleScorer(train, learner_spec.inner_folds, fit_pi, score_pi)
    chosen, report = _select_candidate(
        learner_spec, _role_seed(fold_plan.seed, v, "pi"), scorer
    )
    diagnostics["selected:pi"] = chosen.name
    if report:
        diagnostics["cv_loss:pi"] = report
    treatment = _LearnerTreatment(fit_pi(chosen, train))

    # event ----------------------------------------------------------------
    if data.monotonicity == Monotonicity.STRONG:
        event_rows = train[data.z[train] == 1]

        def fit_p(candidate, rows):
            return candidate.fit_binary(_with_intercept(spec.p[rows]),
                                        data.d[rows])

        def score_p(fitted, rows):
            return _binary_loss(fitted, _with_intercept(spec.p[rows]),
                                data.d[rows])
    else:
        event_rows = train

        def fit_p(candidate, rows):
            return candidate.fit_binary(
                _with_intercept(z[rows], spec.p[rows]), data.d[rows]
            )

        def score_p(fitted, rows):
            return _binary_loss(
                fitted, _with_intercept(z[rows], spec.p[rows]), data.d[rows]
            )

    scorer = _RoleScorer(event_rows, learner_spec.inner_folds, fit_p, score_p)
    chosen, report = _select_candidate(
        learner_spec, _role_seed(fold_plan.seed, v, "p"), scorer
    )
    diagnostics["selected:p"] = chosen.name
    if report:
        diagnostics["cv_loss:p"] = report
    event = _LearnerEvent(fit_p(chosen, event_rows), data.monotonicity)

    # mediator ---------------------------------------------------------------
    m_max = data.mediator_kind.m_max

    def fit_r(candidate, rows):
        splits = []
        for j in range(1, m_max + 1):
            keep = rows[m[rows] <= j]
            if keep.size == 0:
                raise EmptyCell(f"no rows with mediator level <= {j}")
            design = _with_intercept(z[keep], d[keep], spec.r[keep])
            splits.append(
                candidate.fit_binary(design, (m[keep] == j).astype(float))
            )
        return _LearnerMediator(splits, m_max)

    def score_r(fitted, rows):
        pmf = np.empty(rows.shape[0])
        for zz in (0, 1):
            for dd in (0, 1):
                mask = (data.z[rows] == zz) & (data.d[rows] == dd)
                if np.any(mask):
                    sel = rows[mask]
                    pmf[mask] = _pmf_at_observed(fitted, zz, dd, m[sel],
                                                 spec.r[sel], m_max)
        return float(-np.sum(np.log(np.clip(pmf, _PROB_FLOOR, None))))

    scorer = _RoleScorer(train, learner_spec.inner_folds, fit_r, score_r)
    chosen, report = _select_candidate(
        learner_spec, _role_seed(fold_plan.seed, v, "r"), scorer
    )
    diagnostics["selected:r"] = chosen.name
    if report:
        diagnostics["cv_loss:r"] = report
    mediator = fit_r(chosen, train)

    # outcome ----------------------------------------------------------------
    def fit_mu(candidate, rows):
        design = _with_intercept(z[rows], d[rows], m[rows].astype(float),
                                 spec.mu[rows])
        return candidate.fit_mean(design, y[rows])

    def score_mu(fitted, rows):
        design = _with_intercept(z[rows], d[rows], m[rows].astype(float),
                                 spec.mu[rows])
        return _mean_loss(fitted, design, y[rows])

    scorer = _RoleScorer(train, learner_spec.inner_folds, fit_mu, score_mu)
    chosen, report = _select_candidate(
        learner_spec, _role_seed(fold_plan.seed, v, "mu"), scorer
    )
    diagnostics["selected:mu"] = chosen.name
    if report:
        diagnostics["cv_loss:mu"] = report
    outcome = _LearnerOutcome(fit_mu(chosen, train))

    return nuisance.NuisanceBundle(
        treatment=treatment,
        event=event,
        mediator=mediator,
        outcome=outcome,
        spec=spec,
        mediator_kind=data.mediator_kind,
        monotonicity=data.monotonicity,
        clip=clip,
        provenance="crossfit",
        diagnostics=diagnostics,
    )


def _pmf_at_observed(fitted, zz, dd, m_obs, features, m_max) -> np.ndarray:
    out = np.empty(m_obs.shape[0])
    for level in range(m_max + 1):
        mask = m_obs == level
        if np.any(mask):
            out[mask] = fitted.pmf(zz, dd, level, features[mask])
    return out


# --------------------------------------------------------------- estimator


def theta_np(
    data: Dataset,
    fold_plan: FoldPlan,
    learner_spec: LearnerSpec,
    target: CrossWorldTarget,
    spec: Optional[ModelSpec] = None,
    clip: float = DEFAULT_CLIP,
) -> tuple[float, float]:
    """Cross-fitted score-ratio estimate with its plug-in variance.

    Every unit's score contributions are computed under the bundle trained
    on the other folds; the variance divides the centered score by the
    augmented stratum proportion and averages its square over units.
    """
    if fold_plan.assignments.shape[0] != data.n:
        raise ConfigError("fold plan length does not match the dataset")
    if spec is None:
        spec = ModelSpec.shared(data.x)
    psi = np.empty(data.n)
    delta = np.empty(data.n)
    for v in range(1, fold_plan.v + 1):
        bundle = fit_fold_bundle(data, fold_plan, v, learner_spec, spec, clip)
        held_out = fold_plan.rows_in(v)
        assert not np.intersect1d(held_out, fold_plan.rows_out(v)).size
        local = replace(bundle, spec=spec.take(held_out))
        comps = estimators.eif_components(data.take(held_out), local, target)
        psi[held_out] = comps.psi
        delta[held_out] = comps.delta
    proportion = float(delta.mean())
    if not math.isfinite(proportion) or proportion <= 0:
        raise EmptyStratumEstimate(
            f"cross-fitted proportion for stratum {target.stratum.label} is "
            f"{proportion:.3e}"
        )
    estimate = float(psi.mean()) / proportion
    centered = (psi - estimate * delta) / proportion
    variance = float(np.mean(centered ** 2)) / data.n
    if not math.isfinite(estimate) or not math.isfinite(variance) or variance <= 0:
        raise EstimationError(
            "cross-fitted estimate or variance is not a positive finite number"
        )
    return estimate, variance


# ----------------------------------------------------------- full score panel


@dataclass(frozen=True)
class ScorePanel:
    """Per-unit cross-fitted scores for every stratum mean the mode admits.

    One fold loop serves all targets: each fold's bundle is fitted once and
    evaluated for every (stratum, arm-pair) combination, so assembling a full
    effect table costs the same nuisance fitting as a single ``theta_np``
    call. Standard-error algebra for derived effects runs on the stored
    per-unit influence contributions.
    """

    psi: dict[tuple[str, int, int], np.ndarray]
    delta: dict[str, np.ndarray]
    monotonicity: Monotonicity
    n: int
    # summed clip/guard counters from every fold bundle's evaluation
    diagnostics: dict = field(default_factory=dict)

    def _proportion(self, label: str) -> float:
        return float(self.delta[label].mean())

    def _theta(self, label: str, z: int, z_prime: int) -> float:
        return float(self.psi[(label, z, z_prime)].mean()) / self._proportion(label)

    def theta_and_variance(self, target: CrossWorldTarget) -> tuple[float, float]:
        """The same estimate and plug-in variance ``theta_np`` returns."""
        label = target.stratum.label
        estimate = self._theta(label, target.z, target.z_prime)
        centered = self._influence(label, target.z, target.z_prime, estimate)
        variance = float(np.mean(centered ** 2)) / self.n
        if not math.isfinite(estimate) or not math.isfinite(variance) or variance <= 0:
            raise EstimationError(
                "cross-fitted estimate or variance is not a positive finite number"
            )
        return estimate, variance

    def theta_table(self) -> estimators.ThetaTable:
        values = {key: self._theta(*key) for key in self.psi}
        proportions = {label: self._proportion(label) for label in self.delta}
        return estimators.ThetaTable(values=values, proportions=proportions,
                                     monotonicity=self.monotonicity, method="np")

    # ------------------------------------------------- influence contributions

    def _influence(self, label: str, z: int, zp: int, theta: float) -> np.ndarray:
        proportion = self._proportion(label)
        return (self.psi[(label, z, zp)] - theta * self.delta[label]) / proportion

    def _marginal_influence(self, z: int, zp: int) -> tuple[float, np.ndarray]:
        """Mean over strata of proportion-weighted stratum means, with its IF.

        The per-unit contribution of one weighted term reduces to the raw
        score centered at the term's value, so the sum is the stacked scores
        centered at the marginal mean.
        """
        total = np.zeros(self.n)
        value = 0.0
        for label in self.delta:
            theta = self._theta(label, z, zp)
            term = theta * self._proportion(label)
            value += term
            total += self.psi[(label, z, zp)] - term
        return value, total

    def _effect_pieces(self, name: str, label: str | None):
        """The two (stratum or marginal) means an effect contrasts."""
        arms = {"pnie": ((1, 1), (1, 0)), "pnde": ((1, 0), (0, 0)),
                "pce": ((1, 1), (0, 0)), "itt_nie": ((1, 1), (1, 0)),
                "itt_nde": ((1, 0), (0, 0)), "itt": ((1, 1), (0, 0))}
        if name not in arms:
            raise ConfigError(f"unknown effect name {name!r}")
        (za, zpa), (zb, zpb) = arms[name]
        if label is None:
            va, ifa = self._marginal_influence(za, zpa)
            vb, ifb = self._marginal_influence(zb, zpb)
        else:
            va = self._theta(label, za, zpa)
            vb = self._theta(label, zb, zpb)
            ifa = self._influence(label, za, zpa, va)
            ifb = self._influence(label, zb, zpb, vb)
        return va, vb, ifa, ifb

    def effect_standard_error(self, name: str, label: str | None,
                              scale: str = "difference") -> float:
        """Plug-in standard error of one contrast, by the delta method.

        ``label`` names a stratum for per-stratum effects and is None for the
        marginal (intention-to-treat) contrasts. On the ratio scale the
        influence of log(a/b) is if_a/a - if_b/b, rescaled by the ratio.
        """
        va, vb, ifa, ifb = self._effect_pieces(name, label)
        if scale == "difference":
            contribution = ifa - ifb
        elif scale == "ratio":
            if va <= 0 or vb <= 0:
                raise DivisionByZero(
                    f"ratio-scale {name} needs positive means; "
                    f"got {va:.3e} and {vb:.3e}"
                )
            contribution = (va / vb) * (ifa / va - ifb / vb)
        else:
            raise ConfigError(f"unknown scale {scale!r}; expected difference "
                              "or ratio")
        variance = float(np.mean(contribution ** 2)) / self.n
        if not math.isfinite(variance) or variance < 0:
            raise EstimationError(
                f"influence variance for {name} is not finite"
            )
        return math.sqrt(variance)


def collect_scores(
    data: Dataset,
    fold_plan: FoldPlan,
    learner_spec: LearnerSpec,
    spec: Optional[ModelSpec] = None,
    clip: float = DEFAULT_CLIP,
) -> ScorePanel:
    """Cross-fit once and score every admissible target on the held-out folds."""
    if fold_plan.assignments.shape[0] != data.n:
        raise ConfigError("fold plan length does not match the dataset")
    if spec is None:
        spec = ModelSpec.shared(data.x)
    strata = strata_for_mode(data.monotonicity)
    psi = {(s.label, z, zp): np.empty(data.n)
           for s in strata for (z, zp) in estimators.ARM_PAIRS}
    delta = {s.label: np.empty(data.n) for s in strata}
    diagnostics: dict = {}
    for v in range(1, fold_plan.v + 1):
        bundle = fit_fold_bundle(data, fold_plan, v, learner_spec, spec, clip)
        held_out = fold_plan.rows_in(v)
        local = replace(bundle, spec=spec.take(held_out))
        held_data = data.take(held_out)
        for stratum in strata:
            for z, zp in estimators.ARM_PAIRS:
                target = CrossWorldTarget(z=z, z_prime=zp, stratum=stratum)
                comps = estimators.eif_components(held_data, local, target)
                psi[(stratum.label, z, zp)][held_out] = comps.psi
                delta[stratum.label][held_out] = comps.delta
        # replace() shares the diagnostics dict, so fold counters land here;
        # clip counters sum across folds, everything else keeps a per-fold key
        for key, value in bundle.diagnostics.items():
            if key.startswith("clipped:"):
                diagnostics[key] = diagnostics.get(key, 0) + value
            else:
                diagnostics[f"fold{v}:{key}"] = value
    for label, values in delta.items():
        proportion = float(values.mean())
        if not math.isfinite(proportion) or proportion <= 0:
            raise EmptyStratumEstimate(
                f"cross-fitted proportion for stratum {label} is "
                f"{proportion:.3e}"
            )
    return ScorePanel(psi=psi, delta=delta, monotonicity=data.monotonicity,
                      n=data.n, diagnostics=diagnostics)

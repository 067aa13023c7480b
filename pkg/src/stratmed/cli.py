"""Batch command-line interface over the estimation library.

Each subcommand is driven by one structured YAML config file; command-line
flags only override seeds and paths. Exit codes: 0 success, 1 failed
certification, 2 configuration problem, 3 data problem, 4 estimation
failure (a diagnostics file is written alongside the outputs). Output files
are byte-identical across reruns of the same config and seed: nothing
time- or host-dependent is ever written.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import sys
from pathlib import Path
from typing import Callable, Optional

import click
import numpy as np
import pandas as pd
import yaml

from . import crossfit, estimators, glm, inference, nuisance, oracle
from . import sensitivity as sensitivity_mod
from . import simulation as sim
from .core import (
    COMPLIERS,
    CrossWorldTarget,
    Dataset,
    MediatorKind,
    Monotonicity,
    strata_for_mode,
    stratum_from_label,
    validate_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    FitError,
    InvalidDgp,
)

SCHEMAS = {
    "estimate_results": "estimate-results/v1",
    "simulate_replicates": "simulate-replicates/v1",
    "simulate_summary": "simulate-summary/v1",
    "sensitivity_grid": "sensitivity-grid/v1",
    "sensitivity_summary": "sensitivity-summary/v1",
    "oracle_report": "oracle-report/v1",
}

EFFECT_NAMES = ("pnie", "pnde", "pce")
_LEARNER_TOKENS = {
    "glm": crossfit.GlmBaseline,
    "stumps": crossfit.BoostedStumps,
    "knn": crossfit.KNearest,
}


# ------------------------------------------------------------- config reading


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    try:
        payload = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config file {path} is not valid YAML: {err}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must contain a mapping at the "
                          "top level")
    return payload


def _check_keys(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}; "
                          f"allowed: {sorted(allowed)}")


def _section(cfg: dict, key: str, allowed: set[str]) -> dict:
    value = cfg.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be a mapping")
    _check_keys(value, allowed, f"section {key!r}")
    return value


def _req(cfg: dict, key: str, kind, where: str = "config"):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return _typed(cfg[key], key, kind)


def _opt(cfg: dict, key: str, kind, default):
    if key not in cfg or cfg[key] is None:
        return default
    return _typed(cfg[key], key, kind)


def _typed(value, key: str, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"key {key!r} must be an integer, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(
            f"key {key!r} must be of type {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    return value


def _string_list(cfg: dict, key: str, allowed: tuple[str, ...] | None,
                 default: list[str] | None) -> list[str]:
    if key not in cfg or cfg[key] is None:
        if default is None:
            raise ConfigError(f"config is missing required key {key!r}")
        return list(default)
    value = cfg[key]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"key {key!r} must be a non-empty list")
    items = [_typed(v, key, str) for v in value]
    if len(set(items)) != len(items):
        raise ConfigError(f"key {key!r} has duplicate entries: {items}")
    if allowed is not None:
        bad = [v for v in items if v not in allowed]
        if bad:
            raise ConfigError(f"key {key!r} has unknown entries {bad}; "
                              f"allowed: {list(allowed)}")
    return items


# ---------------------------------------------------------- shared sub-parsers


_DATASET_KEYS = {"data", "columns", "mediator", "monotonicity"}


def _parse_monotonicity(cfg: dict) -> Monotonicity:
    raw = _req(cfg, "monotonicity", str)
    try:
        return Monotonicity(raw)
    except ValueError:
        raise ConfigError(
            f"monotonicity must be 'standard' or 'strong', got {raw!r}"
        ) from None


def _parse_mediator(cfg: dict) -> MediatorKind:
    section = _section(cfg, "mediator", {"kind", "m_max"})
    kind = _req(section, "kind", str, "mediator section")
    m_max = _opt(section, "m_max", int, None)
    try:
        return MediatorKind(kind, m_max)
    except DataError as err:
        raise ConfigError(str(err)) from None


def _parse_columns(cfg: dict) -> dict:
    section = _section(cfg, "columns", {"z", "d", "m", "y", "x"})
    for key in ("z", "d", "m", "y"):
        _req(section, key, str, "columns section")
    x_cols = _string_list(section, "x", None, None)
    return {"z": section["z"], "d": section["d"], "m": section["m"],
            "y": section["y"], "x": x_cols}


def _load_dataset(cfg: dict, log: Callable[[str], None]) -> tuple[Dataset, list[str]]:
    path = _req(cfg, "data", str)
    columns = _parse_columns(cfg)
    mediator = _parse_mediator(cfg)
    monotonicity = _parse_monotonicity(cfg)
    try:
        # round_trip parsing recovers the exact doubles the file encodes;
        # the default parser can be off by an ulp, which would make runs on
        # a saved CSV differ from runs on the frame it was written from
        frame = pd.read_csv(path, float_precision="round_trip")
    except OSError as err:
        raise DataError(f"cannot read data file {path}: {err}") from None
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as err:
        raise DataError(f"data file {path} is not a readable CSV: {err}") from None
    data = validate_dataset(frame, columns, mediator, monotonicity)
    log(f"loaded {data.n} rows from {path} "
        f"({len(columns['x'])} covariates, {monotonicity.value} monotonicity)")
    return data, columns["x"]


def _spec_builder(cfg: dict, x_cols: list[str]) -> Optional[Callable[[Dataset], nuisance.ModelSpec]]:
    """Per-nuisance covariate selections, as index maps into the x block.

    Returns None when no selection is configured (all models then share the
    full covariate matrix). The builder works on any Dataset carrying the
    same x columns, so bootstrap refits rebuild features from resampled rows.
    """
    section = _section(cfg, "model", {"pi", "p", "r", "mu"})
    if not section:
        return None
    indices: dict[str, list[int]] = {}
    for role in ("pi", "p", "r", "mu"):
        cols = _string_list(section, role, tuple(x_cols), list(x_cols))
        indices[role] = [x_cols.index(c) for c in cols]

    def build(dataset: Dataset) -> nuisance.ModelSpec:
        return nuisance.ModelSpec(
            pi=dataset.x[:, indices["pi"]],
            p=dataset.x[:, indices["p"]],
            r=dataset.x[:, indices["r"]],
            mu=dataset.x[:, indices["mu"]],
        )

    return build


def _parse_inference(cfg: dict, defaults: dict) -> dict:
    section = _section(cfg, "inference",
                       {"b", "method", "level", "max_failure_share"})
    out = {
        "b": _opt(section, "b", int, defaults["b"]),
        "method": _opt(section, "method", str, defaults["method"]),
        "level": _opt(section, "level", float, defaults["level"]),
        "max_failure_share": _opt(section, "max_failure_share", float,
                                  defaults["max_failure_share"]),
    }
    if out["method"] not in ("wald", "percentile"):
        raise ConfigError(f"inference method must be 'wald' or 'percentile', "
                          f"got {out['method']!r}")
    return out


def _parse_crossfit(cfg: dict) -> dict:
    section = _section(cfg, "crossfit", {"folds", "learners", "inner_folds"})
    tokens = _string_list(section, "learners", tuple(_LEARNER_TOKENS), ["glm"])
    return {
        "folds": _opt(section, "folds", int, crossfit.DEFAULT_FOLDS),
        "learners": tokens,
        "inner_folds": _opt(section, "inner_folds", int, 2),
    }


def _output_paths(cfg: dict, names: dict[str, str],
                  out_override: Optional[str]) -> dict[str, Path]:
    section = _section(cfg, "output", {"dir", *names})
    directory = Path(out_override or _opt(section, "dir", str, "."))
    os.makedirs(directory, exist_ok=True)
    return {
        name: directory / _opt(section, name, str, default)
        for name, default in names.items()
    }


# ------------------------------------------------------------- output writing


def _jsonify(value):
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_jsonify(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (sim.ScenarioId, Monotonicity)):
        return value.value
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonify(payload), indent=2, sort_keys=True)
                    + "\n")


def _write_csv(path: Path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def _numeric_knobs(extra: dict) -> dict:
    knobs = {
        "clip_floor": nuisance.DEFAULT_CLIP,
        "irls_score_tol": glm.SCORE_TOL,
        "irls_max_iter": glm.MAX_ITER,
        "quadrature_nodes": nuisance.QUADRATURE_NODES,
    }
    knobs.update(extra)
    return knobs


def _fit_flags(fit: glm.GlmFit) -> dict:
    return {"family": fit.family, "converged": fit.converged,
            "iterations": fit.iterations, "separated": fit.separated}


def _convergence_record(bundle: nuisance.NuisanceBundle) -> dict:
    mediator = bundle.mediator
    if hasattr(mediator, "split_fits"):
        mediator_flags = [_fit_flags(f) for f in mediator.split_fits]
    else:
        mediator_flags = [_fit_flags(mediator.fit)]
    return {
        "treatment": _fit_flags(bundle.treatment.fit),
        "event": _fit_flags(bundle.event.fit),
        "mediator": mediator_flags,
        "outcome": _fit_flags(bundle.outcome.fit),
    }


def _fold_plan_record(plan: crossfit.FoldPlan) -> dict:
    digest = hashlib.sha256(plan.assignments.tobytes()).hexdigest()
    return {"folds": plan.v, "seed": plan.seed, "hash": digest[:16]}


# ----------------------------------------------------------------- estimation


def _estimand_keys(monotonicity: Monotonicity) -> list[tuple[str, Optional[str]]]:
    keys: list[tuple[str, Optional[str]]] = []
    for stratum in strata_for_mode(monotonicity):
        for name in EFFECT_NAMES:
            keys.append((name, stratum.label))
    keys.extend([("itt_nie", None), ("itt_nde", None), ("itt", None)])
    return keys


def _estimand_id(name: str, label: Optional[str]) -> str:
    return f"{name}[{label}]" if label is not None else name


def _effect_value(effects: estimators.EffectSet, name: str,
                  label: Optional[str]) -> float:
    if label is None:
        return getattr(effects, name)
    return getattr(effects.per_stratum[label], name)


def _statistic_name(method: str, scale: str, name: str,
                    label: Optional[str]) -> str:
    return f"{method}/{scale}/{_estimand_id(name, label)}"


def _parametric_statistics(methods: list[str], scales: list[str],
                           keys: list[tuple[str, Optional[str]]]) -> dict:
    """One scalar statistic per (method, scale, estimand) for the shared pass.

    All statistics for one replicate see the same resampled data and bundle,
    so per-method effect tables are computed once per replicate and reused;
    the cache is keyed by bundle identity, which is stable within a replicate
    because each refit builds a fresh bundle object.
    """
    cache: dict[tuple[str, str], tuple[object, estimators.EffectSet]] = {}
    tables: dict[str, tuple[object, estimators.ThetaTable]] = {}

    def effect_set(method: str, scale: str, data_, bundle_) -> estimators.EffectSet:
        held = tables.get(method)
        if held is None or held[0] is not bundle_:
            tables[method] = (bundle_, estimators.theta_table(data_, bundle_,
                                                              method))
        table = tables[method][1]
        held_set = cache.get((method, scale))
        if held_set is None or held_set[0] is not bundle_:
            cache[(method, scale)] = (bundle_,
                                      estimators.assemble_effects(table, scale))
        return cache[(method, scale)][1]

    statistics = {}
    for method in methods:
        for scale in scales:
            for name, label in keys:
                def stat(data_, bundle_, m=method, sc=scale, nm=name, lb=label):
                    value = _effect_value(effect_set(m, sc, data_, bundle_),
                                          nm, lb)
                    return math.log(value) if sc == "ratio" else value

                statistics[_statistic_name(method, scale, name, label)] = stat
    return statistics


def _interval_from_draws(point: float, scale: str, method: str,
                         draws: inference.BootstrapDraws, level: float):
    """Point, SE, and CI on the requested scale from one draw set.

    Ratio-scale statistics are bootstrapped as logarithms: the Wald interval
    is formed in log space and exponentiated, the reported standard error is
    the delta-method value on the ratio scale, and percentile endpoints are
    exponentiated draws (percentiles are transformation-equivariant).
    """
    z_half = inference.normal_quantile(0.5 * (1.0 + level))
    if scale == "ratio":
        se_log = draws.se
        se = point * se_log
        if method == "wald":
            low = math.exp(math.log(point) - z_half * se_log)
            high = math.exp(math.log(point) + z_half * se_log)
        else:
            low, high = math.exp(draws.ci_low), math.exp(draws.ci_high)
    else:
        se = draws.se
        if method == "wald":
            low, high = point - z_half * se, point + z_half * se
        else:
            low, high = draws.ci_low, draws.ci_high
    return se, low, high


def _cmd_estimate(cfg: dict, out_override: Optional[str],
                  log: Callable[[str], None]) -> None:
    _check_keys(cfg, _DATASET_KEYS | {"methods", "scales", "model", "clip",
                                      "seed", "inference", "crossfit",
                                      "output"}, "config")
    paths = _output_paths(cfg, {"results": "results.csv",
                                "metadata": "run_metadata.json"}, out_override)
    data, x_cols = _load_dataset(cfg, log)
    methods = _string_list(cfg, "methods", ("a", "b", "c", "d", "mr", "np"),
                           None)
    scales = _string_list(cfg, "scales", ("difference", "ratio"),
                          ["difference"])
    clip = _opt(cfg, "clip", float, nuisance.DEFAULT_CLIP)
    seed = _opt(cfg, "seed", int, 0)
    infer = _parse_inference(cfg, {"b": 200, "method": "wald", "level": 0.95,
                                   "max_failure_share": 0.05})
    cf = _parse_crossfit(cfg)
    builder = _spec_builder(cfg, x_cols)

    states = np.random.SeedSequence([seed]).generate_state(2)
    boot_seed, fold_seed = int(states[0]), int(states[1])
    parametric = [m for m in methods if m != "np"]
    keys = _estimand_keys(data.monotonicity)
    z_half = inference.normal_quantile(0.5 * (1.0 + infer["level"]))

    spec = builder(data) if builder is not None else None
    effect_sets: dict[tuple[str, str], estimators.EffectSet] = {}
    bundle = None
    if parametric:
        bundle = nuisance.fit_parametric_bundle(data, spec=spec, clip=clip)
        for method in parametric:
            table = estimators.theta_table(data, bundle, method)
            for scale in scales:
                effect_sets[(method, scale)] = estimators.assemble_effects(
                    table, scale
                )
        log(f"fitted working models and point estimates for "
            f"{len(parametric)} parametric methods")

    panel = None
    plan = None
    if "np" in methods:
        plan = crossfit.partition(data.n, cf["folds"], fold_seed)
        learner_spec = crossfit.LearnerSpec(
            candidates=tuple(_LEARNER_TOKENS[t]() for t in cf["learners"]),
            inner_folds=cf["inner_folds"],
        )
        panel = crossfit.collect_scores(data, plan, learner_spec, spec=spec,
                                        clip=clip)
        np_table = panel.theta_table()
        for scale in scales:
            effect_sets[("np", scale)] = estimators.assemble_effects(np_table,
                                                                     scale)
        log(f"cross-fitted {cf['folds']} folds with learners "
            f"{cf['learners']}")

    draws_map: dict[str, inference.BootstrapDraws] = {}
    if parametric:
        statistics = _parametric_statistics(parametric, scales, keys)

        def refit(resampled: Dataset) -> nuisance.NuisanceBundle:
            rspec = builder(resampled) if builder is not None else None
            return nuisance.fit_parametric_bundle(resampled, spec=rspec,
                                                  clip=clip)

        draws_map = inference.bootstrap_table(
            data, statistics, b=infer["b"], seed=boot_seed,
            level=infer["level"], max_failure_share=infer["max_failure_share"],
            refit=refit,
        )
        log(f"bootstrap finished: {infer['b']} replicates x "
            f"{len(statistics)} statistics")

    rows = []
    for method in methods:
        for scale in scales:
            effects = effect_sets[(method, scale)]
            for name, label in keys:
                point = _effect_value(effects, name, label)
                if method == "np":
                    se = panel.effect_standard_error(name, label, scale)
                    if scale == "ratio":
                        se_log = se / point
                        low = math.exp(math.log(point) - z_half * se_log)
                        high = math.exp(math.log(point) + z_half * se_log)
                    else:
                        low, high = point - z_half * se, point + z_half * se
                    tag, n_draws = "EifWald", 0
                else:
                    draws = draws_map[_statistic_name(method, scale, name,
                                                      label)]
                    se, low, high = _interval_from_draws(
                        point, scale, infer["method"], draws, infer["level"]
                    )
                    tag = ("BootstrapWald" if infer["method"] == "wald"
                           else "BootstrapPercentile")
                    n_draws = infer["b"]
                result = inference.EstimateResult(
                    estimand=_estimand_id(name, label), scale=scale,
                    point=point, se=se, ci_low=low, ci_high=high,
                    method=method, inference=tag, draws=n_draws, seed=seed,
                )
                rows.append({
                    "estimand": result.estimand,
                    "stratum": label if label is not None else "",
                    "scale": result.scale, "point": result.point,
                    "se": result.se, "ci_low": result.ci_low,
                    "ci_high": result.ci_high, "method": result.method,
                    "inference": result.inference, "draws": result.draws,
                    "seed": result.seed,
                })
    _write_csv(paths["results"], pd.DataFrame(rows))

    clip_counts: dict[str, int] = {}
    if bundle is not None:
        clip_counts.update(bundle.diagnostics)
    if panel is not None:
        for key, count in panel.diagnostics.items():
            clip_counts[f"crossfit:{key}"] = count
    failures = {name: dict(d.failures) for name, d in draws_map.items()
                if d.failures}
    metadata = {
        "command": "estimate",
        "seed": seed,
        "derived_seeds": {"bootstrap": boot_seed, "fold_plan": fold_seed},
        "n_rows": data.n,
        "methods": methods,
        "scales": scales,
        "knobs": _numeric_knobs({
            "clip_floor": clip, "bootstrap_b": infer["b"],
            "confidence_level": infer["level"],
            "max_failure_share": infer["max_failure_share"],
            "crossfit_folds": cf["folds"],
            "crossfit_inner_folds": cf["inner_folds"],
        }),
        "inference_method": infer["method"],
        "learners": cf["learners"] if "np" in methods else [],
        "clip_counts": clip_counts,
        "convergence": (_convergence_record(bundle) if bundle is not None
                        else {}),
        "fold_plan": _fold_plan_record(plan) if plan is not None else None,
        "bootstrap_failures": failures,
        "schemas": {"results": SCHEMAS["estimate_results"]},
    }
    _write_json(paths["metadata"], metadata)
    log(f"wrote {len(rows)} result rows to {paths['results']}")
    log(f"wrote run metadata to {paths['metadata']}")


# ----------------------------------------------------------------- simulation


def _cmd_simulate(cfg: dict, out_override: Optional[str],
                  log: Callable[[str], None]) -> None:
    _check_keys(cfg, {"scenario", "n", "reps", "methods", "target",
                      "bootstrap", "crossfit", "truth", "null_variant",
                      "seed", "max_failure_share", "output"}, "config")
    paths = _output_paths(cfg, {"replicates": "replicates.csv",
                                "summary": "summary.csv",
                                "metadata": "run_metadata.json"}, out_override)
    raw_scenario = _req(cfg, "scenario", str)
    try:
        scenario = sim.ScenarioId(raw_scenario.strip().upper())
    except ValueError:
        raise ConfigError(
            f"unknown scenario {raw_scenario!r}; expected one of "
            f"{[s.value for s in sim.ScenarioId]}"
        ) from None
    n = _req(cfg, "n", int)
    reps = _req(cfg, "reps", int)
    methods = _string_list(cfg, "methods", sim.KNOWN_METHODS, ["mr"])
    target_cfg = _section(cfg, "target", {"stratum", "z", "z_prime"})
    label = _opt(target_cfg, "stratum", str, "10")
    try:
        stratum = stratum_from_label(label)
    except DataError as err:
        raise ConfigError(str(err)) from None
    target = CrossWorldTarget(z=_opt(target_cfg, "z", int, 1),
                              z_prime=_opt(target_cfg, "z_prime", int, 0),
                              stratum=stratum)
    boot_cfg = _section(cfg, "bootstrap", {"b", "ci_method", "level"})
    bootstrap_b = _opt(boot_cfg, "b", int, 0)
    ci_method = _opt(boot_cfg, "ci_method", str, "wald")
    level = _opt(boot_cfg, "level", float, 0.95)
    cf = _parse_crossfit(cfg)
    truth_cfg = _section(cfg, "truth", {"seed", "draws"})
    truth_seed = _opt(truth_cfg, "seed", int, sim.TRUTH_SEED)
    truth_draws = _opt(truth_cfg, "draws", int, sim.DEFAULT_TRUTH_DRAWS)
    null = _opt(cfg, "null_variant", bool, False)
    seed = _opt(cfg, "seed", int, 0)
    share = _opt(cfg, "max_failure_share", float, 0.05)

    truth = None
    if truth_seed != sim.TRUTH_SEED:
        log(f"integrating truth from {truth_draws} draws (seed {truth_seed})")
        truth = sim.compute_truth(truth_seed, truth_draws, null=null)
    learners = None
    if "np" in methods:
        learners = crossfit.LearnerSpec(
            candidates=tuple(_LEARNER_TOKENS[t]() for t in cf["learners"]),
            inner_folds=cf["inner_folds"],
        )
    log(f"running scenario {scenario.value}: n={n}, reps={reps}, "
        f"methods={methods}, bootstrap_b={bootstrap_b}")
    result = sim.run_scenario_study(
        scenario, n=n, reps=reps, methods=tuple(methods), seed=seed,
        target=target, bootstrap_b=bootstrap_b, level=level,
        ci_method=ci_method, folds=cf["folds"], learners=learners,
        truth=truth, truth_draws=truth_draws, null=null,
        max_failure_share=share,
    )
    _write_csv(paths["replicates"], result.replicates)
    _write_csv(paths["summary"], result.summary)
    metadata = {
        "command": "simulate",
        "seed": seed,
        "scenario": scenario,
        "n": n,
        "reps": reps,
        "methods": methods,
        "target": {"stratum": stratum.label, "z": target.z,
                   "z_prime": target.z_prime},
        "null_variant": null,
        "knobs": _numeric_knobs({
            "bootstrap_b": bootstrap_b, "confidence_level": level,
            "max_failure_share": share, "crossfit_folds": cf["folds"],
            "crossfit_inner_folds": cf["inner_folds"],
            "truth_draws": truth_draws, "truth_seed": truth_seed,
        }),
        "ci_method": ci_method,
        "diagnostics": result.diagnostics,
        "schemas": {"replicates": SCHEMAS["simulate_replicates"],
                    "summary": SCHEMAS["simulate_summary"]},
    }
    _write_json(paths["metadata"], metadata)
    if bool(result.summary["low_replicate"].any()):
        log(f"NOTE: low-replicate run (reps={reps} < 100); summary "
            "statistics are noisy")
    log(f"wrote per-replicate rows to {paths['replicates']}")
    log(f"wrote summary to {paths['summary']}")
    log(f"wrote run metadata to {paths['metadata']}")


# ---------------------------------------------------------------- sensitivity


def _build_spec_grid(cfg: dict, framework: str,
                     monotonicity: Monotonicity) -> list:
    section = _section(cfg, "grid", {"lambda_m1", "lambda_m0", "lambda_y1",
                                     "lambda_y0", "zeta"})
    if framework == "xi":
        if "zeta" in section:
            raise ConfigError("grid key 'zeta' belongs to the t framework")
        axes = []
        for key in ("lambda_m1", "lambda_m0", "lambda_y1", "lambda_y0"):
            values = section.get(key, [1.0])
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid key {key!r} must be a non-empty list")
            axes.append([_typed(v, key, float) for v in values])
        return [
            sensitivity_mod.XiSpec(lambda_m1=m1, lambda_m0=m0, lambda_y1=y1,
                                   lambda_y0=y0, mode=monotonicity)
            for m1, m0, y1, y0 in itertools.product(*axes)
        ]
    bad = [k for k in section if k != "zeta"]
    if bad:
        raise ConfigError(f"grid keys {bad} belong to the xi framework")
    values = section.get("zeta", [1.0])
    if not isinstance(values, list) or not values:
        raise ConfigError("grid key 'zeta' must be a non-empty list")
    return [sensitivity_mod.TSpec(zeta=_typed(v, "zeta", float))
            for v in values]


def _identity_mask(frame: pd.DataFrame, framework: str) -> pd.Series:
    if framework == "xi":
        return ((frame["lambda_m1"] == 1.0) & (frame["lambda_m0"] == 1.0)
                & (frame["lambda_y1"] == 1.0) & (frame["lambda_y0"] == 1.0))
    return frame["zeta"] == 1.0


def _tipping_label(row: pd.Series, framework: str) -> str:
    keys = (("lambda_m1", "lambda_m0", "lambda_y1", "lambda_y0")
            if framework == "xi" else ("zeta",))
    return ", ".join(f"{k}={row[k]:g}" for k in keys)


def _cmd_sensitivity(cfg: dict, out_override: Optional[str],
                     log: Callable[[str], None]) -> None:
    _check_keys(cfg, _DATASET_KEYS | {"model", "clip", "framework", "effect",
                                      "stratum", "scale", "grid", "inference",
                                      "seed", "output"}, "config")
    paths = _output_paths(cfg, {"grid": "sensitivity_grid.csv",
                                "summary": "tipping_summary.csv",
                                "metadata": "run_metadata.json"}, out_override)
    data, x_cols = _load_dataset(cfg, log)
    framework = _req(cfg, "framework", str)
    if framework not in ("xi", "t"):
        raise ConfigError(f"framework must be 'xi' or 't', got {framework!r}")
    effect = _req(cfg, "effect", str)
    if effect not in EFFECT_NAMES:
        raise ConfigError(f"effect must be one of {list(EFFECT_NAMES)}, "
                          f"got {effect!r}")
    label = _req(cfg, "stratum", str)
    try:
        stratum = stratum_from_label(label)
    except DataError as err:
        raise ConfigError(str(err)) from None
    if stratum not in strata_for_mode(data.monotonicity):
        raise ConfigError(f"stratum {label!r} is not admissible under "
                          f"{data.monotonicity.value} monotonicity")
    scale = _opt(cfg, "scale", str, "difference")
    if scale not in ("difference", "ratio"):
        raise ConfigError(f"scale must be 'difference' or 'ratio', "
                          f"got {scale!r}")
    clip = _opt(cfg, "clip", float, nuisance.DEFAULT_CLIP)
    seed = _opt(cfg, "seed", int, 0)
    builder = _spec_builder(cfg, x_cols)
    spec_grid = _build_spec_grid(cfg, framework, data.monotonicity)

    boot = None
    infer = None
    if cfg.get("inference") is not None:
        infer = _parse_inference(cfg, {"b": 200, "method": "percentile",
                                       "level": 0.95,
                                       "max_failure_share": 0.05})
        boot = inference.BootstrapConfig(
            b=infer["b"], seed=seed, level=infer["level"],
            method=infer["method"],
            max_failure_share=infer["max_failure_share"],
            spec_builder=builder, clip=clip,
        )

    spec = builder(data) if builder is not None else None
    bundle = nuisance.fit_parametric_bundle(data, spec=spec, clip=clip)
    log(f"sweeping {len(spec_grid)} grid points ({framework} framework, "
        f"{effect} for stratum {label}, {scale} scale)")
    frame = sensitivity_mod.sensitivity_grid(
        data, bundle, spec_grid, effect, stratum, scale=scale, inference=boot
    )
    _write_csv(paths["grid"], frame)

    ok = frame["error"] == ""
    identity = _identity_mask(frame, framework) & ok
    tipping = frame[frame["tipping_point"]]
    summary = pd.DataFrame([{
        "framework": framework, "effect": effect, "stratum": label,
        "scale": scale, "n_points": len(frame), "n_ok": int(ok.sum()),
        "n_failed": int((~ok).sum()), "n_tipping": len(tipping),
        "identity_point_included": bool(identity.any()),
        "base_estimate": (float(frame.loc[identity, "estimate"].iloc[0])
                          if identity.any() else float("nan")),
        "first_tipping": (_tipping_label(tipping.iloc[0], framework)
                          if len(tipping) else ""),
    }])
    _write_csv(paths["summary"], summary)
    metadata = {
        "command": "sensitivity",
        "seed": seed,
        "framework": framework,
        "effect": effect,
        "stratum": label,
        "scale": scale,
        "n_rows": data.n,
        "grid_size": len(spec_grid),
        "knobs": _numeric_knobs({
            "clip_floor": clip,
            "bootstrap_b": infer["b"] if infer else 0,
            "confidence_level": infer["level"] if infer else None,
            "max_failure_share": (infer["max_failure_share"] if infer
                                  else None),
        }),
        "clip_counts": dict(bundle.diagnostics),
        "convergence": _convergence_record(bundle),
        "schemas": {"grid": SCHEMAS["sensitivity_grid"],
                    "summary": SCHEMAS["sensitivity_summary"]},
    }
    _write_json(paths["metadata"], metadata)
    log(f"{int(ok.sum())} of {len(frame)} grid points succeeded; "
        f"{len(tipping)} tipping points")
    log(f"wrote grid to {paths['grid']}")
    log(f"wrote tipping summary to {paths['summary']}")
    if not ok.any():
        tallies: dict[str, int] = {}
        for message in frame.loc[~ok, "error"]:
            key = str(message).split(":", 1)[0]
            tallies[key] = tallies.get(key, 0) + 1
        raise EstimationError(
            f"every grid point failed; error classes: {tallies}"
        )


# --------------------------------------------------------------- certification


_GOLDEN_VALUES = {
    "proportion_compliers":
        lambda dgp: oracle.oracle_stratum_proportion(dgp, COMPLIERS),
    "compliers_treated_outcome_treated_mediator":
        lambda dgp: oracle.oracle_theta(dgp, CrossWorldTarget(1, 1, COMPLIERS)),
    "compliers_treated_outcome_control_mediator":
        lambda dgp: oracle.oracle_theta(dgp, CrossWorldTarget(1, 0, COMPLIERS)),
    "compliers_control_outcome_control_mediator":
        lambda dgp: oracle.oracle_theta(dgp, CrossWorldTarget(0, 0, COMPLIERS)),
}


def _cmd_oracle(cfg: dict, fixture_override: Optional[str],
                out_override: Optional[str],
                log: Callable[[str], None]) -> None:
    _check_keys(cfg, {"fixture", "tol", "output"}, "config")
    paths = _output_paths(cfg, {"report": "certification.csv",
                                "metadata": "run_metadata.json"}, out_override)
    tol = _opt(cfg, "tol", float, 1e-10)
    if not (tol > 0):
        raise ConfigError(f"tol must be positive, got {tol!r}")
    fixture = fixture_override or _opt(cfg, "fixture", str, None)
    if fixture is None:
        dgp, golden = oracle.load_reference_dgp()
        source = "shipped"
    else:
        try:
            text = Path(fixture).read_text()
        except OSError as err:
            raise DataError(f"cannot read fixture {fixture}: {err}") from None
        try:
            payload = yaml.safe_load(text)
        except yaml.YAMLError as err:
            raise InvalidDgp(f"fixture {fixture} is not valid YAML: "
                             f"{err}") from None
        if not isinstance(payload, dict):
            raise InvalidDgp("fixture file does not contain a mapping")
        dgp = oracle.dgp_from_dict(payload)
        golden = dict(payload.get("golden", {}))
        source = fixture
    log(f"certifying generating process from {source} fixture "
        f"(tolerance {tol:g})")

    checks = oracle.certification_report(dgp, tol=tol)
    for key in sorted(golden):
        name = f"golden value matches [{key}]"
        extract = _GOLDEN_VALUES.get(key)
        if extract is None:
            checks.append({"check": f"golden key recognized [{key}]",
                           "error": float("inf"), "tol": tol,
                           "passed": False})
            continue
        err = abs(float(extract(dgp)) - float(golden[key]))
        checks.append({"check": name, "error": err, "tol": tol,
                       "passed": err <= tol})
    frame = pd.DataFrame(checks)
    _write_csv(paths["report"], frame)

    failed = frame[~frame["passed"]]
    metadata = {
        "command": "oracle",
        "fixture": source,
        "knobs": {"tol": tol},
        "n_checks": len(frame),
        "n_failed": len(failed),
        "max_error": float(frame["error"].max()),
        "schemas": {"report": SCHEMAS["oracle_report"]},
    }
    _write_json(paths["metadata"], metadata)
    for _, row in failed.iterrows():
        log(f"FAIL {row['check']}: discrepancy {row['error']:.3e} "
            f"(tolerance {row['tol']:g})")
    log(f"{len(frame)} identities checked, {len(failed)} failed; "
        f"max discrepancy {float(frame['error'].max()):.3e}")
    log(f"wrote certification report to {paths['report']}")
    if len(failed):
        sys.exit(1)


# ------------------------------------------------------------------- commands


def _execute(body: Callable[[], None], diagnostics_path: Path) -> None:
    """Run one command body under the documented exit-code contract."""
    try:
        body()
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except DataError as err:
        click.echo(f"data error: {err}", err=True)
        sys.exit(3)
    except (FitError, EstimationError) as err:
        payload = {"error": type(err).__name__, "message": str(err)}
        os.makedirs(diagnostics_path.parent, exist_ok=True)
        _write_json(diagnostics_path, payload)
        click.echo(f"estimation error ({type(err).__name__}): {err}",
                   err=True)
        click.echo(f"diagnostics written to {diagnostics_path}", err=True)
        sys.exit(4)


def _diagnostics_path(cfg: dict, out_override: Optional[str]) -> Path:
    section = cfg.get("output") or {}
    if not isinstance(section, dict):
        section = {}
    directory = Path(out_override or section.get("dir", "."))
    return directory / section.get("diagnostics", "diagnostics.json")


@click.group()
def main() -> None:
    """Principal-stratum mediation estimators, batch interface."""


@main.command("estimate")
@click.option("--config", "config_path", required=True,
              help="YAML run config.")
@click.option("--seed", type=int, default=None,
              help="Override the config seed.")
@click.option("--data", "data_path", default=None,
              help="Override the input CSV path.")
@click.option("--out", "out_dir", default=None,
              help="Override the output directory.")
def estimate_command(config_path, seed, data_path, out_dir) -> None:
    """Estimate mediation effects from a CSV of unit records."""
    def body() -> None:
        cfg = _load_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        if data_path is not None:
            cfg["data"] = data_path
        _cmd_estimate(cfg, out_dir, click.echo)

    cfg_probe = _probe_config(config_path)
    _execute(body, _diagnostics_path(cfg_probe, out_dir))


@main.command("simulate")
@click.option("--config", "config_path", required=True,
              help="YAML run config.")
@click.option("--seed", type=int, default=None,
              help="Override the config seed.")
@click.option("--out", "out_dir", default=None,
              help="Override the output directory.")
def simulate_command(config_path, seed, out_dir) -> None:
    """Run a scenario study against the built-in generating process."""
    def body() -> None:
        cfg = _load_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        _cmd_simulate(cfg, out_dir, click.echo)

    cfg_probe = _probe_config(config_path)
    _execute(body, _diagnostics_path(cfg_probe, out_dir))


@main.command("sensitivity")
@click.option("--config", "config_path", required=True,
              help="YAML run config.")
@click.option("--seed", type=int, default=None,
              help="Override the config seed.")
@click.option("--data", "data_path", default=None,
              help="Override the input CSV path.")
@click.option("--out", "out_dir", default=None,
              help="Override the output directory.")
def sensitivity_command(config_path, seed, data_path, out_dir) -> None:
    """Sweep a confounding-parameter grid around one base analysis."""
    def body() -> None:
        cfg = _load_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        if data_path is not None:
            cfg["data"] = data_path
        _cmd_sensitivity(cfg, out_dir, click.echo)

    cfg_probe = _probe_config(config_path)
    _execute(body, _diagnostics_path(cfg_probe, out_dir))


@main.command("oracle")
@click.option("--config", "config_path", required=True,
              help="YAML run config.")
@click.option("--fixture", "fixture_path", default=None,
              help="Override the fixture path.")
@click.option("--out", "out_dir", default=None,
              help="Override the output directory.")
def oracle_command(config_path, fixture_path, out_dir) -> None:
    """Certify the estimation identities on an exactly enumerable process."""
    def body() -> None:
        cfg = _load_config(config_path)
        _cmd_oracle(cfg, fixture_path, out_dir, click.echo)

    cfg_probe = _probe_config(config_path)
    _execute(body, _diagnostics_path(cfg_probe, out_dir))


def _probe_config(config_path: str) -> dict:
    """Best-effort peek at the output section for the diagnostics path.

    Never raises: a broken config will fail properly inside the command body
    with exit code 2, and diagnostics then default next to the working
    directory.
    """
    try:
        payload = yaml.safe_load(Path(config_path).read_text())
        return payload if isinstance(payload, dict) else {}
    except Exception:
        return {}


if __name__ == "__main__":
    main()

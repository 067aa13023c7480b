"""Exact-enumeration checks: golden values, identities, robustness algebra."""

import numpy as np
import pytest

from stratmed.core import (
    ALWAYS_TAKERS,
    COMPLIERS,
    NEVER_TAKERS,
    CrossWorldTarget,
    Monotonicity,
    strata_for_mode,
)
from stratmed.errors import ConfigError, ImpliedNegativePmf, InvalidDgp, UnsupportedTarget
from stratmed.oracle import (
    DiscreteDgp,
    NuisanceTables,
    certification_report,
    dgp_from_dict,
    load_reference_dgp,
    oracle_coupled_theta,
    oracle_delta_mean,
    oracle_eif_mean,
    oracle_moment_expectation,
    oracle_p_marginal_dr,
    oracle_sensitivity_truth,
    oracle_stratum_proportion,
    oracle_theta,
    oracle_theta_mr,
    perturbed_tables,
)
from stratmed.sensitivity import TSpec, XiSpec

from _dgps import (
    mediator_confounded_dgp,
    random_discrete_dgp,
    stratum_confounded_dgp,
    stratum_confounded_dgp_strong,
)

ARM_PAIRS = ((1, 1), (1, 0), (0, 0))


def all_targets(dgp):
    return [CrossWorldTarget(z, zp, s)
            for s in strata_for_mode(dgp.monotonicity)
            for (z, zp) in ARM_PAIRS]


# ------------------------------------------------------------ golden fixture


def test_reference_fixture_matches_hand_computed_values():
    dgp, golden = load_reference_dgp()
    assert oracle_stratum_proportion(dgp, COMPLIERS) == pytest.approx(
        golden["proportion_compliers"], abs=1e-12
    )
    values = {
        "compliers_treated_outcome_treated_mediator": CrossWorldTarget(1, 1, COMPLIERS),
        "compliers_treated_outcome_control_mediator": CrossWorldTarget(1, 0, COMPLIERS),
        "compliers_control_outcome_control_mediator": CrossWorldTarget(0, 0, COMPLIERS),
    }
    for key, target in values.items():
        assert oracle_theta(dgp, target) == pytest.approx(golden[key], abs=1e-12)


def test_reference_fixture_certifies_clean():
    dgp, _ = load_reference_dgp()
    report = certification_report(dgp)
    assert report and all(check["passed"] for check in report)


# ------------------------------------------------- identities on random laws


@pytest.mark.parametrize("mode,seed", [
    (Monotonicity.STANDARD, 11), (Monotonicity.STANDARD, 12),
    (Monotonicity.STRONG, 13), (Monotonicity.STRONG, 14),
])
def test_moment_forms_agree_and_match_the_estimand(mode, seed):
    rng = np.random.default_rng(seed)
    dgp = random_discrete_dgp(rng, n_points=6, levels=4, mode=mode)
    for target in all_targets(dgp):
        theta = oracle_theta(dgp, target)
        for form in "abcd":
            value = oracle_moment_expectation(dgp, target, form)
            assert value == pytest.approx(theta, abs=1e-10)


@pytest.mark.parametrize("mode,seed", [
    (Monotonicity.STANDARD, 21), (Monotonicity.STRONG, 22),
])
def test_influence_mean_vanishes_at_truth_and_tracks_offsets(mode, seed):
    rng = np.random.default_rng(seed)
    dgp = random_discrete_dgp(rng, mode=mode)
    for target in all_targets(dgp):
        theta = oracle_theta(dgp, target)
        assert oracle_eif_mean(dgp, target, theta) == pytest.approx(0.0, abs=1e-10)
        assert oracle_eif_mean(dgp, target, theta + 1.0) == pytest.approx(
            -1.0, abs=1e-10
        )


@pytest.mark.parametrize("mode,seed", [
    (Monotonicity.STANDARD, 31), (Monotonicity.STRONG, 32),
])
def test_proportion_score_mean_equals_stratum_proportion(mode, seed):
    rng = np.random.default_rng(seed)
    dgp = random_discrete_dgp(rng, mode=mode)
    for stratum in strata_for_mode(mode):
        target = CrossWorldTarget(1, 0, stratum)
        assert oracle_delta_mean(dgp, target) == pytest.approx(
            oracle_stratum_proportion(dgp, stratum), abs=1e-12
        )


@pytest.mark.parametrize("which", ["pi", "p", "r", "mu"])
@pytest.mark.parametrize("mode,seed", [
    (Monotonicity.STANDARD, 41), (Monotonicity.STRONG, 42),
])
def test_single_wrong_nuisance_leaves_mr_value_at_truth(which, mode, seed):
    rng = np.random.default_rng(seed)
    dgp = random_discrete_dgp(rng, mode=mode)
    wrong = perturbed_tables(dgp, which)
    for target in all_targets(dgp):
        theta = oracle_theta(dgp, target)
        assert oracle_theta_mr(dgp, target, wrong) == pytest.approx(
            theta, abs=1e-10
        )


def test_two_wrong_nuisances_generally_move_the_mr_value():
    rng = np.random.default_rng(43)
    dgp = random_discrete_dgp(rng)
    target = CrossWorldTarget(1, 0, COMPLIERS)
    theta = oracle_theta(dgp, target)
    wrong = perturbed_tables(dgp, "r")
    wrong = NuisanceTables(pi1=wrong.pi1, p1=wrong.p1, r=wrong.r,
                           mu=perturbed_tables(dgp, "mu").mu)
    assert abs(oracle_theta_mr(dgp, target, wrong) - theta) > 1e-4


def test_augmented_cell_probability_is_doubly_robust():
    rng = np.random.default_rng(51)
    dgp = random_discrete_dgp(rng)
    for z in (0, 1):
        for d in (0, 1):
            truth = float(dgp.tables.p(z, d) @ dgp.x_probs)
            for which in ("pi", "p"):
                wrong = perturbed_tables(dgp, which)
                assert oracle_p_marginal_dr(dgp, z, d, wrong) == pytest.approx(
                    truth, abs=1e-10
                )


def test_moment_form_licensing_breaks_outside_its_model_set():
    rng = np.random.default_rng(52)
    dgp = random_discrete_dgp(rng)
    target = CrossWorldTarget(1, 0, COMPLIERS)
    theta = oracle_theta(dgp, target)
    # each row: form, a nuisance it relies on (perturbing it moves the value)
    reliant = [("a", "r"), ("b", "r"), ("b", "mu"), ("c", "mu"), ("d", "r")]
    for form, which in reliant:
        wrong = perturbed_tables(dgp, which)
        assert abs(oracle_moment_expectation(dgp, target, form, wrong) - theta) > 1e-4
    # and one nuisance each form tolerates at the population level
    tolerant = [("a", "mu"), ("b", "p"), ("c", "r"), ("d", "pi")]
    for form, which in tolerant:
        wrong = perturbed_tables(dgp, which)
        assert oracle_moment_expectation(dgp, target, form, wrong) == pytest.approx(
            theta, abs=1e-10
        )


# ------------------------------------------------------------- invalid inputs


def test_invalid_processes_are_rejected():
    rng = np.random.default_rng(61)
    base = random_discrete_dgp(rng, n_points=4, levels=3)
    t = base.tables
    with pytest.raises(InvalidDgp, match="sum to 1"):
        DiscreteDgp(base.x_points, base.x_probs,
                    NuisanceTables(t.pi1, t.p1, t.r * 1.01, t.mu),
                    Monotonicity.STANDARD)
    with pytest.raises(InvalidDgp, match="ordering"):
        DiscreteDgp(base.x_points, base.x_probs,
                    NuisanceTables(t.pi1, t.p1[::-1].copy(), t.r, t.mu),
                    Monotonicity.STANDARD)
    with pytest.raises(InvalidDgp, match="zero event rate"):
        DiscreteDgp(base.x_points, base.x_probs, t, Monotonicity.STRONG)
    with pytest.raises(InvalidDgp, match="probabilities"):
        DiscreteDgp(base.x_points, base.x_probs * 0.5, t, Monotonicity.STANDARD)
    with pytest.raises(InvalidDgp, match="malformed"):
        dgp_from_dict({"monotonicity": "standard", "m_max": 1, "points": [{}]})


def test_coupled_truth_requires_latent_tables():
    rng = np.random.default_rng(62)
    dgp = random_discrete_dgp(rng)
    with pytest.raises(InvalidDgp, match="latent"):
        oracle_coupled_theta(dgp, CrossWorldTarget(1, 0, COMPLIERS))


# --------------------------------------------- sensitivity truth recoveries


def test_weighted_recovery_under_stratum_confounding():
    dgp, spec = stratum_confounded_dgp()
    for target in all_targets(dgp):
        truth = oracle_coupled_theta(dgp, target)
        assert oracle_sensitivity_truth(dgp, spec, target) == pytest.approx(
            truth, abs=1e-10
        )


def test_unweighted_values_are_biased_under_stratum_confounding():
    dgp, _ = stratum_confounded_dgp()
    biased = 0
    for target in all_targets(dgp):
        gap = abs(oracle_theta(dgp, target) - oracle_coupled_theta(dgp, target))
        arms = (target.z, target.z_prime)
        if (target.stratum.label, arms) in (("11", (0, 0)), ("00", (1, 1))):
            # these two entries carry identity weights by construction
            assert gap < 1e-12
        else:
            assert gap > 1e-3
            biased += 1
    assert biased == 7


def test_weighted_recovery_under_stratum_confounding_strong_mode():
    dgp, spec = stratum_confounded_dgp_strong()
    for target in all_targets(dgp):
        truth = oracle_coupled_theta(dgp, target)
        assert oracle_sensitivity_truth(dgp, spec, target) == pytest.approx(
            truth, abs=1e-10
        )


def test_treated_side_ratios_are_inert_in_strong_mode():
    dgp, spec = stratum_confounded_dgp_strong()
    noisy = XiSpec(lambda_m1=3.0, lambda_y1=0.2,
                   lambda_m0=spec.lambda_m0, lambda_y0=spec.lambda_y0,
                   mode=Monotonicity.STRONG)
    for target in all_targets(dgp):
        assert oracle_sensitivity_truth(dgp, noisy, target) == oracle_sensitivity_truth(
            dgp, spec, target
        )


def test_mean_ratio_recovery_under_mediator_confounding():
    dgp, spec = mediator_confounded_dgp()
    for stratum in strata_for_mode(Monotonicity.STANDARD):
        target = CrossWorldTarget(1, 0, stratum)
        truth = oracle_coupled_theta(dgp, target)
        assert oracle_sensitivity_truth(dgp, spec, target) == pytest.approx(
            truth, abs=1e-10
        )
        assert abs(oracle_theta(dgp, target) - truth) > 1e-2


def test_within_world_means_unaffected_by_mediator_confounding():
    dgp, _ = mediator_confounded_dgp()
    for stratum in strata_for_mode(Monotonicity.STANDARD):
        for arms in ((1, 1), (0, 0)):
            target = CrossWorldTarget(arms[0], arms[1], stratum)
            assert oracle_theta(dgp, target) == pytest.approx(
                oracle_coupled_theta(dgp, target), abs=1e-12
            )


def test_identity_specs_reduce_to_the_plain_estimand():
    dgp, _ = stratum_confounded_dgp()
    for target in all_targets(dgp):
        assert oracle_sensitivity_truth(dgp, XiSpec(), target) == pytest.approx(
            oracle_theta(dgp, target), abs=1e-12
        )
        if (target.z, target.z_prime) == (1, 0):
            assert oracle_sensitivity_truth(dgp, TSpec(), target) == pytest.approx(
                oracle_theta(dgp, target), abs=1e-12
            )


def test_sensitivity_truth_rejects_bad_requests():
    dgp, spec = stratum_confounded_dgp()
    with pytest.raises(UnsupportedTarget):
        oracle_sensitivity_truth(dgp, spec, CrossWorldTarget(0, 1, COMPLIERS))
    with pytest.raises(UnsupportedTarget):
        oracle_sensitivity_truth(dgp, TSpec(zeta=1.2),
                                 CrossWorldTarget(1, 1, COMPLIERS))
    strong_spec = XiSpec(mode=Monotonicity.STRONG)
    with pytest.raises(ConfigError, match="monotonicity"):
        oracle_sensitivity_truth(dgp, strong_spec, CrossWorldTarget(1, 0, COMPLIERS))


def test_incompatible_ratio_raises_implied_negative_pmf():
    # a narrow complier band with a heavy upper level leaves no room at 0
    tables = NuisanceTables(
        pi1=np.array([0.5]),
        p1=np.array([[0.5], [0.6]]),
        r=np.array([[[[0.5], [0.5]], [[0.5], [0.5]]],
                    [[[0.5], [0.5]], [[0.5], [0.5]]]]),
        mu=np.ones((2, 2, 2, 1)),
    )
    dgp = DiscreteDgp(np.array([[0.0]]), np.array([1.0]), tables,
                      Monotonicity.STANDARD)
    spec = XiSpec(lambda_m1=3.0)
    with pytest.raises(ImpliedNegativePmf, match="level 0"):
        oracle_sensitivity_truth(dgp, spec, CrossWorldTarget(1, 0, COMPLIERS))


# ------------------------------------------------------- latent construction


def test_latent_build_reproduces_cell_mixtures():
    dgp, _ = stratum_confounded_dgp()
    lat = dgp.latent
    t = dgp.tables
    p10 = lat.stratum_probs["10"]
    p11s = lat.stratum_probs["11"]
    np.testing.assert_allclose(t.p(1, 1), p10 + p11s, atol=1e-14)
    np.testing.assert_allclose(t.p(0, 1), p11s, atol=1e-14)
    mix = (p10 * lat.mediator_pmf[(1, "10")] + p11s * lat.mediator_pmf[(1, "11")])
    np.testing.assert_allclose(t.r[1, 1], mix / (p10 + p11s), atol=1e-14)

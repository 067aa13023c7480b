"""Data model: strata, targets, mediator kinds, table validation."""

import numpy as np
import pandas as pd
import pytest

from stratmed import core
from stratmed import simulation as sim
from stratmed.core import (
    ALWAYS_TAKERS,
    COMPLIERS,
    NEVER_TAKERS,
    CrossWorldTarget,
    MediatorKind,
    Monotonicity,
    stratum_from_label,
    strata_for_mode,
    validate_dataset,
)
from stratmed.errors import (
    DataError,
    EmptyCell,
    MissingColumn,
    NonBinaryTreatment,
    StrongMonotonicityViolated,
)

N_ROWS = 300
DATA_SEED = 23
COLUMNS = {"z": "z", "d": "d", "m": "m", "y": "y",
           "x": ["x1", "x2", "x3", "x4"]}


def sample_frame() -> pd.DataFrame:
    return sim.simulate(N_ROWS, seed=DATA_SEED).as_table()


def check(frame, columns=COLUMNS, kind=None, mode=Monotonicity.STANDARD):
    return validate_dataset(frame, columns,
                            kind or MediatorKind.binary(), mode)


# --------------------------------------------------------------------- strata


def test_stratum_labels_and_arm_values():
    assert COMPLIERS.label == "10"
    assert ALWAYS_TAKERS.label == "11"
    assert NEVER_TAKERS.label == "00"
    assert COMPLIERS.k == 1
    assert ALWAYS_TAKERS.k == 0 and NEVER_TAKERS.k == 0
    assert COMPLIERS.d_for_arm(1) == 1 and COMPLIERS.d_for_arm(0) == 0
    assert ALWAYS_TAKERS.d_for_arm(0) == 1
    assert NEVER_TAKERS.d_for_arm(1) == 0
    assert COMPLIERS.companion == (1, 1)
    assert NEVER_TAKERS.companion == (1, 0)
    assert ALWAYS_TAKERS.companion == (0, 1)
    with pytest.raises(DataError):
        core.Stratum(0, 1)


def test_stratum_labels_round_trip():
    for label in ("10", "11", "00"):
        assert stratum_from_label(label).label == label
    with pytest.raises(DataError):
        stratum_from_label("01")
    with pytest.raises(DataError):
        stratum_from_label("compliers")


def test_strata_for_mode_orders_compliers_first():
    standard = strata_for_mode(Monotonicity.STANDARD)
    assert standard == [COMPLIERS, ALWAYS_TAKERS, NEVER_TAKERS]
    strong = strata_for_mode(Monotonicity.STRONG)
    assert strong == [COMPLIERS, NEVER_TAKERS]


def test_cross_world_target_resolves_event_arms():
    target = CrossWorldTarget(1, 0, COMPLIERS)
    assert target.d_z == 1 and target.d_z_prime == 0
    assert target.label == "10:10"
    same_world = CrossWorldTarget(0, 0, ALWAYS_TAKERS)
    assert same_world.d_z == 1 and same_world.d_z_prime == 1
    with pytest.raises(DataError):
        CrossWorldTarget(2, 0, COMPLIERS)


# ------------------------------------------------------------- mediator kinds


def test_mediator_kinds_resolve_their_level_sets():
    binary = MediatorKind.binary()
    assert binary.m_max == 1
    assert binary.is_discrete
    assert list(binary.levels) == [0, 1]

    cat = MediatorKind.categorical(3)
    assert list(cat.levels) == [0, 1, 2, 3]

    cont = MediatorKind.continuous_gaussian()
    assert not cont.is_discrete
    with pytest.raises(DataError):
        _ = cont.levels


def test_mediator_kind_rejects_inconsistent_declarations():
    with pytest.raises(DataError):
        MediatorKind("ordinal")
    with pytest.raises(DataError):
        MediatorKind("binary", m_max=3)
    with pytest.raises(DataError):
        MediatorKind.categorical(0)
    with pytest.raises(DataError):
        MediatorKind("continuous_gaussian", m_max=2)


# ------------------------------------------------------------------ validation


def test_validate_dataset_freezes_a_clean_table():
    frame = sample_frame()
    data = check(frame)
    assert data.n == N_ROWS
    assert data.p == 4
    assert data.z.dtype == np.int64
    assert sum(data.cell_counts.values()) == N_ROWS
    assert set(data.cell_counts) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    with pytest.raises(ValueError):
        data.y[0] = 0.0  # frozen storage


def test_validate_dataset_accepts_renamed_columns():
    frame = sample_frame().rename(columns={"y": "wages", "x2": "age"})
    columns = {"z": "z", "d": "d", "m": "m", "y": "wages",
               "x": ["x1", "age", "x3", "x4"]}
    data = check(frame, columns=columns)
    assert data.n == N_ROWS


def test_validate_dataset_revalidates_a_dataset_input():
    data = check(sample_frame())
    again = validate_dataset(data, {}, data.mediator_kind, data.monotonicity)
    assert again.n == data.n
    assert np.array_equal(again.y, data.y)


def test_validate_dataset_reports_missing_and_nonbinary_columns():
    frame = sample_frame()
    with pytest.raises(MissingColumn, match="lacks entry"):
        check(frame, columns={"z": "z", "d": "d", "m": "m", "y": "y"})
    with pytest.raises(MissingColumn, match="missing columns"):
        check(frame, columns={**COLUMNS, "y": "wages"})
    with pytest.raises(DataError, match="at least one covariate"):
        check(frame, columns={**COLUMNS, "x": []})

    bad_z = frame.copy()
    bad_z.loc[0, "z"] = 2
    with pytest.raises(NonBinaryTreatment):
        check(bad_z)
    bad_d = frame.copy()
    bad_d.loc[0, "d"] = 0.5
    with pytest.raises(NonBinaryTreatment):
        check(bad_d)


def test_validate_dataset_rejects_missing_or_nonfinite_values():
    with_nan = sample_frame()
    with_nan.loc[3, "y"] = np.nan
    with pytest.raises(DataError, match="missing values"):
        check(with_nan)

    inf_y = sample_frame()
    inf_y.loc[3, "y"] = np.inf
    with pytest.raises(DataError, match="outcome"):
        check(inf_y)

    inf_x = sample_frame()
    inf_x.loc[3, "x2"] = -np.inf
    with pytest.raises(DataError, match="covariate"):
        check(inf_x)


def test_validate_dataset_checks_discrete_mediator_coding():
    fractional = sample_frame()
    fractional.loc[0, "m"] = 0.25
    with pytest.raises(DataError, match="non-integer"):
        check(fractional)

    out_of_range = sample_frame()
    out_of_range.loc[0, "m"] = 2
    with pytest.raises(DataError, match="outside"):
        check(out_of_range)

    gap = sample_frame()
    gap["m"] = np.where(gap["m"] > 0, 2.0, 0.0)
    with pytest.raises(DataError, match="no gaps"):
        check(gap, kind=MediatorKind.categorical(2))

    continuous = sample_frame()
    continuous["m"] = continuous["m"] + 0.1
    data = check(continuous, kind=MediatorKind.continuous_gaussian())
    assert not data.mediator_kind.is_discrete


def test_validate_dataset_enforces_the_declared_monotonicity():
    frame = sample_frame()
    assert ((frame["z"] == 0) & (frame["d"] == 1)).sum() > 0
    with pytest.raises(StrongMonotonicityViolated):
        check(frame, mode=Monotonicity.STRONG)

    one_sided = frame.copy()
    one_sided.loc[one_sided["z"] == 0, "d"] = 0
    data = check(one_sided, mode=Monotonicity.STRONG)
    assert data.cell_counts[(0, 1)] == 0

    # strong mode does not require the (0, 1) cell, standard does
    no_treated_events = frame[~((frame["z"] == 1) & (frame["d"] == 1))]
    with pytest.raises(EmptyCell):
        check(no_treated_events)
    with pytest.raises(EmptyCell):
        check(one_sided[~((one_sided["z"] == 1) & (one_sided["d"] == 1))],
              mode=Monotonicity.STRONG)


def test_take_recounts_cells_and_preserves_schema():
    data = check(sample_frame())
    rng = np.random.default_rng(1)
    rows = rng.integers(0, data.n, data.n)
    resampled = data.take(rows)
    assert resampled.n == data.n
    assert resampled.mediator_kind == data.mediator_kind
    assert resampled.monotonicity == data.monotonicity
    assert sum(resampled.cell_counts.values()) == data.n
    assert np.array_equal(resampled.y, data.y[rows])

    head = data.take(np.arange(10))
    assert head.n == 10
    assert sum(head.cell_counts.values()) == 10


def test_as_table_round_trips_through_validation():
    data = check(sample_frame())
    table = data.as_table()
    assert list(table.columns) == ["z", "d", "m", "y", "x1", "x2", "x3", "x4"]
    again = check(table)
    assert np.array_equal(again.x, data.x)
    assert np.array_equal(again.m, data.m)

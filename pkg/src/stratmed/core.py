"""Domain types and dataset validation.

Everything downstream works on a validated, immutable :class:`Dataset` and on
the small bookkeeping types for principal strata and cross-world targets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    EmptyCell,
    MissingColumn,
    NonBinaryTreatment,
    StrongMonotonicityViolated,
)


class Monotonicity(str, enum.Enum):
    """How the post-treatment event D is assumed to respond to assignment.

    STANDARD rules out defiers (D under treatment is never below D under
    control). STRONG additionally forces D=0 whenever Z=0 (one-sided
    noncompliance).
    """

    STANDARD = "standard"
    STRONG = "strong"


@dataclass(frozen=True)
class MediatorKind:
    """Declared support of the mediator column.

    kind is one of "binary", "categorical", "continuous_gaussian".
    m_max is the top level for discrete mediators (1 for binary).
    """

    kind: str
    m_max: int | None = None

    _KINDS = ("binary", "categorical", "continuous_gaussian")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise DataError(f"unknown mediator kind {self.kind!r}")
        if self.kind == "binary" and self.m_max not in (None, 1):
            raise DataError("binary mediator has m_max=1")
        if self.kind == "binary":
            object.__setattr__(self, "m_max", 1)
        if self.kind == "categorical":
            if self.m_max is None or self.m_max < 1:
                raise DataError("categorical mediator needs m_max >= 1")
        if self.kind == "continuous_gaussian" and self.m_max is not None:
            raise DataError("continuous mediator has no m_max")

    @classmethod
    def binary(cls) -> "MediatorKind":
        return cls("binary")

    @classmethod
    def categorical(cls, m_max: int) -> "MediatorKind":
        return cls("categorical", m_max)

    @classmethod
    def continuous_gaussian(cls) -> "MediatorKind":
        return cls("continuous_gaussian")

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous_gaussian"

    @property
    def levels(self) -> range:
        """Support 0..m_max for discrete mediators."""
        if not self.is_discrete:
            raise DataError("continuous mediator has no finite level set")
        return range(self.m_max + 1)


@dataclass(frozen=True)
class Stratum:
    """Joint potential values (d1, d0) of the post-treatment event.

    Admissible strata are compliers (1,0), always-takers (1,1) and
    never-takers (0,0); defiers (0,1) are excluded by assumption.
    """

    d1: int
    d0: int

    def __post_init__(self):
        if (self.d1, self.d0) not in ((1, 0), (1, 1), (0, 0)):
            raise DataError(f"inadmissible stratum ({self.d1},{self.d0})")

    @property
    def k(self) -> int:
        """1 for compliers, 0 for the two concordant strata."""
        return abs(self.d1 - self.d0)

    @property
    def companion(self) -> tuple[int, int]:
        """The (z*, d*) cell whose share identifies this stratum's size.

        Compliers pair with (1,1), never-takers with (1,0) and
        always-takers with (0,1); compliers additionally subtract the
        (0,1) share (handled via k by the callers).
        """
        return {(1, 0): (1, 1), (0, 0): (1, 0), (1, 1): (0, 1)}[(self.d1, self.d0)]

    @property
    def label(self) -> str:
        return f"{self.d1}{self.d0}"

    def d_for_arm(self, z: int) -> int:
        """Potential event value under assignment z."""
        return self.d1 if z == 1 else self.d0


COMPLIERS = Stratum(1, 0)
ALWAYS_TAKERS = Stratum(1, 1)
NEVER_TAKERS = Stratum(0, 0)

_STRATA_BY_LABEL = {s.label: s for s in (COMPLIERS, ALWAYS_TAKERS, NEVER_TAKERS)}


def stratum_from_label(label: str) -> Stratum:
    try:
        return _STRATA_BY_LABEL[label]
    except KeyError:
        raise DataError(f"unknown stratum label {label!r}") from None


@dataclass(frozen=True)
class CrossWorldTarget:
    """Index of one cross-world stratum mean.

    Identifies the mean outcome under assignment z with the mediator drawn
    from its distribution under assignment z_prime, within a stratum.
    """

    z: int
    z_prime: int
    stratum: Stratum

    def __post_init__(self):
        if self.z not in (0, 1) or self.z_prime not in (0, 1):
            raise DataError("target arms must be 0 or 1")

    @property
    def d_z(self) -> int:
        return self.stratum.d_for_arm(self.z)

    @property
    def d_z_prime(self) -> int:
        return self.stratum.d_for_arm(self.z_prime)

    @property
    def label(self) -> str:
        return f"{self.stratum.label}:{self.z}{self.z_prime}"


def strata_for_mode(monotonicity: Monotonicity) -> list[Stratum]:
    """Admissible strata for the mode, compliers first.

    Defiers never appear. Under strong monotonicity there are no
    always-takers either.
    """
    if monotonicity == Monotonicity.STRONG:
        return [COMPLIERS, NEVER_TAKERS]
    return [COMPLIERS, ALWAYS_TAKERS, NEVER_TAKERS]


# -------------------------------------------------------------------- dataset

@dataclass(frozen=True)
class Dataset:
    """Validated unit-level table, immutable after construction."""

    n: int
    x: np.ndarray
    z: np.ndarray
    d: np.ndarray
    m: np.ndarray
    y: np.ndarray
    mediator_kind: MediatorKind
    monotonicity: Monotonicity
    cell_counts: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.x, self.z, self.d, self.m, self.y):
            arr.setflags(write=False)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def as_table(self, columns: Mapping[str, object] | None = None) -> pd.DataFrame:
        """Canonical DataFrame with columns z, d, m, y, x1..xp."""
        out = {"z": self.z, "d": self.d, "m": self.m, "y": self.y}
        for j in range(self.p):
            out[f"x{j + 1}"] = self.x[:, j]
        return pd.DataFrame(out)

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset (or bootstrap resample) as a new Dataset.

        Skips re-validation on purpose: resampling can empty a (z, d) cell,
        and bootstrap replicates are allowed to fail later with the precise
        estimation error instead of a blanket data error.
        """
        return Dataset(
            n=len(rows),
            x=self.x[rows].copy(),
            z=self.z[rows].copy(),
            d=self.d[rows].copy(),
            m=self.m[rows].copy(),
            y=self.y[rows].copy(),
            mediator_kind=self.mediator_kind,
            monotonicity=self.monotonicity,
            cell_counts=_tabulate_cells(self.z[rows], self.d[rows]),
        )


def _tabulate_cells(z: np.ndarray, d: np.ndarray) -> dict[tuple[int, int], int]:
    return {
        (zz, dd): int(np.sum((z == zz) & (d == dd)))
        for zz in (0, 1)
        for dd in (0, 1)
    }


def _required_cells(monotonicity: Monotonicity) -> list[tuple[int, int]]:
    # Positivity needs every cell that can carry stratum mass: all four under
    # standard monotonicity, and the three z=0,d=1-free cells under strong.
    if monotonicity == Monotonicity.STRONG:
        return [(0, 0), (1, 0), (1, 1)]
    return [(0, 0), (0, 1), (1, 0), (1, 1)]


def validate_dataset(
    raw: pd.DataFrame | Dataset,
    columns: Mapping[str, object],
    mediator_kind: MediatorKind,
    monotonicity: Monotonicity,
) -> Dataset:
    """Check a raw table and freeze it into a Dataset.

    Parameters
    ----------
    raw : DataFrame (or an already validated Dataset, which is re-checked)
    columns : mapping with keys "z", "d", "m", "y" (column names) and "x"
        (list of covariate column names).
    mediator_kind, monotonicity : declared schema for the m column and the
        event-response assumption.

    Raises
    ------
    MissingColumn, NonBinaryTreatment, StrongMonotonicityViolated, EmptyCell,
    DataError (bad mediator coding, missing values, no covariates).
    """
    if isinstance(raw, Dataset):
        columns = {"z": "z", "d": "d", "m": "m", "y": "y",
                   "x": [f"x{j + 1}" for j in range(raw.p)]}
        raw = raw.as_table()

    for key in ("z", "d", "m", "y", "x"):
        if key not in columns:
            raise MissingColumn(f"column mapping lacks entry for {key!r}")
    x_cols = list(columns["x"])
    if len(x_cols) < 1:
        raise DataError("need at least one covariate column")
    wanted = [columns["z"], columns["d"], columns["m"], columns["y"], *x_cols]
    missing = [c for c in wanted if c not in raw.columns]
    if missing:
        raise MissingColumn(f"missing columns: {missing}")

    sub = raw[wanted]
    if sub.isna().to_numpy().any():
        raise DataError("missing values present; impute or drop before loading")

    z = np.asarray(raw[columns["z"]], dtype=float)
    d = np.asarray(raw[columns["d"]], dtype=float)
    for name, vec in (("z", z), ("d", d)):
        vals = np.unique(vec)
        if not np.isin(vals, (0.0, 1.0)).all():
            raise NonBinaryTreatment(
                f"{name} column must be coded 0/1, saw values {vals[:5]}"
            )
    z = z.astype(np.int64)
    d = d.astype(np.int64)

    m_raw = np.asarray(raw[columns["m"]], dtype=float)
    if mediator_kind.is_discrete:
        if not np.all(m_raw == np.round(m_raw)):
            raise DataError("discrete mediator has non-integer values")
        m = m_raw.astype(np.int64)
        if m.min() < 0 or m.max() > mediator_kind.m_max:
            raise DataError(
                f"mediator values outside 0..{mediator_kind.m_max}"
            )
        observed = np.unique(m)
        if not np.array_equal(observed, np.arange(mediator_kind.m_max + 1)):
            raise DataError(
                "mediator levels must cover 0..m_max with no gaps; "
                f"saw {observed.tolist()}"
            )
        m = m.astype(float)
    else:
        m = m_raw.astype(float)
        if not np.isfinite(m).all():
            raise DataError("non-finite mediator values")

    y = np.asarray(raw[columns["y"]], dtype=float)
    if not np.isfinite(y).all():
        raise DataError("non-finite outcome values")

    x = np.asarray(raw[x_cols], dtype=float)
    if not np.isfinite(x).all():
        raise DataError("non-finite covariate values")

    if monotonicity == Monotonicity.STRONG and np.any((z == 0) & (d == 1)):
        raise StrongMonotonicityViolated(
            f"{int(np.sum((z == 0) & (d == 1)))} rows have z=0, d=1"
        )

    cells = _tabulate_cells(z, d)
    for cell in _required_cells(monotonicity):
        if cells[cell] == 0:
            raise EmptyCell(f"required (z,d) cell {cell} has no rows")

    return Dataset(
        n=len(z),
        x=x,
        z=z,
        d=d,
        m=m,
        y=y,
        mediator_kind=mediator_kind,
        monotonicity=monotonicity,
        cell_counts=cells,
    )

"""Principal-stratum natural mediation effects from tabular data.

Estimates cross-world stratum means and their mediation decompositions
(PNIE, PNDE, PCE per stratum; ITT-NIE, ITT-NDE overall) with moment-type,
multiply robust, and cross-fitted nonparametric estimators, plus sensitivity
analysis for the two key ignorability assumptions, an exact discrete-DGP
enumeration oracle, and a simulation-study harness.
"""

from .core import (
    ALWAYS_TAKERS,
    COMPLIERS,
    NEVER_TAKERS,
    CrossWorldTarget,
    Dataset,
    MediatorKind,
    Monotonicity,
    Stratum,
    strata_for_mode,
    stratum_from_label,
    validate_dataset,
)

__all__ = [
    "ALWAYS_TAKERS",
    "COMPLIERS",
    "NEVER_TAKERS",
    "CrossWorldTarget",
    "Dataset",
    "MediatorKind",
    "Monotonicity",
    "Stratum",
    "strata_for_mode",
    "stratum_from_label",
    "validate_dataset",
]

__version__ = "0.1.0"

"""Shared finite generating processes for the exact-enumeration tests.

The violation builders construct latent stratum-level laws first and derive
the observed tables from them, so every "truth" in these tests comes from a
route that never touches identification weights.
"""

import numpy as np

from stratmed.core import MediatorKind, Monotonicity
from stratmed.oracle import (
    DiscreteDgp,
    LatentT,
    LatentXi,
    NuisanceTables,
    dgp_from_latent_t,
    dgp_from_latent_xi,
)
from stratmed.sensitivity import TSpec, XiSpec


class TableBundle:
    """Exact-table stand-in for a fitted bundle, for true-nuisance tests.

    Maps each dataset row back to its covariate support point and serves the
    tabulated probabilities directly, so sample-level estimator checks can be
    run with the generating nuisances plugged in.
    """

    provenance = "exact-tables"

    def __init__(self, dgp: DiscreteDgp, data):
        self.dgp = dgp
        self.monotonicity = dgp.monotonicity
        m_max = dgp.m_max
        self.mediator_kind = (MediatorKind.binary() if m_max == 1
                              else MediatorKind.categorical(m_max))
        deltas = data.x[:, None, :] - dgp.x_points[None, :, :]
        self.idx = np.argmin(np.abs(deltas).sum(axis=2), axis=1)
        self.diagnostics = {}

    def _points(self, rows):
        return self.idx if rows is None else self.idx[rows]

    def n_rows(self) -> int:
        return self.idx.shape[0]

    def pi(self, z, rows=None):
        return self.dgp.tables.pi(z)[self._points(rows)]

    def p(self, z, d, rows=None):
        return self.dgp.tables.p(z, d)[self._points(rows)]

    def r(self, z, d, m, rows=None):
        pts = self._points(rows)
        table = self.dgp.tables.r[z, d]
        if np.isscalar(m):
            return table[int(m), pts]
        return table[np.asarray(m).astype(int), pts]

    def mu(self, z, d, m, rows=None):
        pts = self._points(rows)
        table = self.dgp.tables.mu[z, d]
        if np.isscalar(m):
            return table[int(m), pts]
        return table[np.asarray(m).astype(int), pts]

    def denom(self, values, name):
        return values

    def count(self, key, increment=1):
        self.diagnostics[key] = self.diagnostics.get(key, 0) + increment

X_TWO_POINT = np.array([[0.0], [1.0]])


def scaled_pmf(base: np.ndarray, lam: float) -> np.ndarray:
    """Scale the nonzero levels by lam and renormalize through level 0."""
    out = lam * base
    out[0] = 1.0 - out[1:].sum(axis=0)
    if np.any(out <= 0):
        raise ValueError("scaling left no mass at level 0")
    return out


def random_discrete_dgp(rng, n_points=5, levels=3,
                        mode=Monotonicity.STANDARD) -> DiscreteDgp:
    x_points = rng.normal(size=(n_points, 2))
    x_probs = rng.dirichlet(np.ones(n_points) * 3.0)
    pi1 = rng.uniform(0.25, 0.75, n_points)
    if mode == Monotonicity.STRONG:
        p1 = np.vstack([np.zeros(n_points), rng.uniform(0.35, 0.8, n_points)])
    else:
        low = rng.uniform(0.08, 0.3, n_points)
        p1 = np.vstack([low, low + rng.uniform(0.25, 0.55, n_points)])
    r = rng.dirichlet(np.ones(levels) * 2.0,
                      size=(2, 2, n_points)).transpose(0, 1, 3, 2)
    mu = rng.normal(2.0, 1.0, size=(2, 2, levels, n_points))
    return DiscreteDgp(x_points=x_points, x_probs=x_probs,
                       tables=NuisanceTables(pi1=pi1, p1=p1, r=r, mu=mu),
                       monotonicity=mode)


def stratum_confounded_dgp() -> tuple[DiscreteDgp, XiSpec]:
    """Standard-mode process whose strata genuinely differ within cells."""
    lam_m1, lam_m0, lam_y1, lam_y0 = 1.6, 0.7, 1.25, 0.8
    f_m1_11 = np.array([[0.5, 0.45], [0.3, 0.3], [0.2, 0.25]])
    f_m0_00 = np.array([[0.4, 0.5], [0.35, 0.2], [0.25, 0.3]])
    f_m0_11 = np.array([[0.3, 0.4], [0.4, 0.3], [0.3, 0.3]])
    f_m1_00 = np.array([[0.45, 0.35], [0.25, 0.35], [0.3, 0.3]])
    y1_11 = np.array([[1.0, 1.2], [2.0, 1.8], [3.0, 2.6]])
    y0_00 = np.array([[0.8, 1.0], [1.5, 1.4], [2.2, 2.0]])
    y0_11 = np.array([[1.1, 0.9], [1.7, 1.6], [2.4, 2.2]])
    y1_00 = np.array([[0.9, 1.1], [1.6, 1.9], [2.5, 2.3]])
    latent = LatentXi(
        stratum_probs={"10": np.array([0.5, 0.45]),
                       "11": np.array([0.25, 0.3]),
                       "00": np.array([0.25, 0.25])},
        mediator_pmf={(1, "10"): scaled_pmf(f_m1_11.copy(), lam_m1),
                      (1, "11"): f_m1_11, (1, "00"): f_m1_00,
                      (0, "10"): scaled_pmf(f_m0_00.copy(), lam_m0),
                      (0, "11"): f_m0_11, (0, "00"): f_m0_00},
        outcome_mean={(1, "10"): lam_y1 * y1_11, (1, "11"): y1_11,
                      (1, "00"): y1_00,
                      (0, "10"): lam_y0 * y0_00, (0, "11"): y0_11,
                      (0, "00"): y0_00},
    )
    dgp = dgp_from_latent_xi(X_TWO_POINT, np.array([0.45, 0.55]),
                             np.array([0.55, 0.4]), latent)
    spec = XiSpec(lambda_m1=lam_m1, lambda_m0=lam_m0,
                  lambda_y1=lam_y1, lambda_y0=lam_y0)
    return dgp, spec


def stratum_confounded_dgp_strong() -> tuple[DiscreteDgp, XiSpec]:
    """Strong-mode variant: only control-side confounding can exist."""
    lam_m0, lam_y0 = 0.75, 1.3
    f_m0_00 = np.array([[0.45, 0.5], [0.3, 0.25], [0.25, 0.25]])
    f_m1_10 = np.array([[0.35, 0.3], [0.35, 0.4], [0.3, 0.3]])
    f_m1_00 = np.array([[0.5, 0.4], [0.3, 0.35], [0.2, 0.25]])
    y0_00 = np.array([[0.9, 1.1], [1.6, 1.5], [2.3, 2.1]])
    y1_10 = np.array([[1.2, 1.0], [2.1, 1.9], [2.9, 2.7]])
    y1_00 = np.array([[1.0, 0.8], [1.8, 1.7], [2.6, 2.5]])
    latent = LatentXi(
        stratum_probs={"10": np.array([0.55, 0.5]),
                       "00": np.array([0.45, 0.5])},
        mediator_pmf={(1, "10"): f_m1_10, (1, "00"): f_m1_00,
                      (0, "10"): scaled_pmf(f_m0_00.copy(), lam_m0),
                      (0, "00"): f_m0_00},
        outcome_mean={(1, "10"): y1_10, (1, "00"): y1_00,
                      (0, "10"): lam_y0 * y0_00, (0, "00"): y0_00},
    )
    dgp = dgp_from_latent_xi(X_TWO_POINT, np.array([0.48, 0.52]),
                             np.array([0.5, 0.45]), latent,
                             Monotonicity.STRONG)
    spec = XiSpec(lambda_m0=lam_m0, lambda_y0=lam_y0,
                  mode=Monotonicity.STRONG)
    return dgp, spec


def mediator_confounded_dgp(zeta: float = 1.4) -> tuple[DiscreteDgp, TSpec]:
    """Outcome means tied to the realized mediator by a constant ratio."""
    factor = np.full((3, 2), zeta)
    factor[0] = 1.0
    latent = LatentT(
        stratum_probs={"10": np.array([0.5, 0.45]),
                       "11": np.array([0.2, 0.25]),
                       "00": np.array([0.3, 0.3])},
        mediator_pmf={1: np.array([[0.4, 0.35], [0.35, 0.3], [0.25, 0.35]]),
                      0: np.array([[0.55, 0.5], [0.25, 0.3], [0.2, 0.2]])},
        y1_base=np.array([[1.0, 1.2], [1.8, 1.5], [2.4, 2.1]]),
        y1_factor={1: factor, 0: factor.copy()},
        y0_mean=np.array([[0.7, 0.9], [1.3, 1.2], [1.9, 1.7]]),
    )
    dgp = dgp_from_latent_t(X_TWO_POINT, np.array([0.45, 0.55]),
                            np.array([0.6, 0.45]), latent)
    return dgp, TSpec(zeta=zeta)

"""Observed, Fisher, average and splitting-residual information matrices.

All four kinds are symmetric (m+1) x (m+1) matrices over the parameters
(sigma2, kappa_1..kappa_m) and satisfy the splitting identity

    (observed + fisher) / 2 = average + splitting_residual.

The average kind contains only quadratic forms in P y and is evaluated
with matrix-vector products against the factorized mixed-model system:
xi = P y once, eta_i = dH_i xi, zeta_j = P eta_j, entries are inner
products.  The other kinds carry trace terms and are desk-scale only
(dense projection under the size cap); the expectation of the average
kind equals the Fisher kind and the splitting residual has mean zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mme
from .model import LOG, Model, Theta, dH_matvec, require_admissible

OBSERVED = "observed"
FISHER = "fisher"
AVERAGE = "average"
SPLITTING_RESIDUAL = "splitting_residual"


@dataclass(frozen=True)
class InfoMatrix:
    """Symmetric information matrix tagged by kind."""

    kind: str
    values: np.ndarray

    @property
    def m_plus_1(self) -> int:
        return self.values.shape[0]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _quad_forms(model: Model, theta: Theta, system: mme.MMESystem):
    """Shared quadratic-form primitives at (model, theta).

    Returns (ypy, quad1, quad2, quad_d2) where
      ypy       = y^T P y
      quad1[i]  = y^T P dH_i P y
      quad2[ij] = y^T P dH_i P dH_j P y   (symmetrized)
      quad_d2   = y^T P d2H_ij P y        (diagonal only; zero off it)
    """
    y = model.dataset.y
    xi = mme.apply_P(system, y)
    ypy = float(y @ xi)
    m = model.m
    if m == 0:
        z = np.zeros((0, 0))
        return ypy, np.zeros(0), z, z
    eta = np.column_stack([dH_matvec(model, theta, i, xi) for i in range(m)])
    zeta = mme.apply_P(system, eta)
    quad1 = xi @ eta
    quad2 = _sym(eta.T @ zeta)
    quad_d2 = np.diag(quad1) if model.spec.scale == LOG else np.zeros((m, m))
    return ypy, quad1, quad2, quad_d2


def _trace_terms(model: Model, theta: Theta, system: mme.MMESystem,
                 dense_cap: int | None, P: np.ndarray | None):
    """(t1, t2, t_d2): tr(P dH_i), tr(P dH_i P dH_j), tr(P d2H_ij)."""
    m = model.m
    if m == 0:
        z = np.zeros((0, 0))
        return np.zeros(0), z, z
    if P is None:
        P = mme.projection_dense(system, dense_cap)
    t1, t2 = mme.trace_pairs(model, theta, P)
    t_d2 = np.diag(t1) if model.spec.scale == LOG else np.zeros((m, m))
    return t1, t2, t_d2


def observed(model: Model, theta: Theta,
             system: mme.MMESystem | None = None,
             P: np.ndarray | None = None,
             dense_cap: int | None = None) -> InfoMatrix:
    """Observed information (negative Hessian of l_R)."""
    require_admissible(model, theta)
    if system is None:
        system = mme.assemble(model, theta)
    ypy, quad1, quad2, quad_d2 = _quad_forms(model, theta, system)
    t1, t2, t_d2 = _trace_terms(model, theta, system, dense_cap, P)
    s2 = theta.sigma2
    n_p = model.n - model.p
    M = np.zeros((model.m + 1, model.m + 1))
    M[0, 0] = ypy / s2**3 - 0.5 * n_p / s2**2
    M[0, 1:] = M[1:, 0] = quad1 / (2.0 * s2**2)
    M[1:, 1:] = 0.5 * (t_d2 - t2) + (2.0 * quad2 - quad_d2) / (2.0 * s2)
    return InfoMatrix(kind=OBSERVED, values=_sym(M))


def fisher(model: Model, theta: Theta,
           system: mme.MMESystem | None = None,
           P: np.ndarray | None = None,
           dense_cap: int | None = None) -> InfoMatrix:
    """Fisher (expected) information; trace terms only."""
    require_admissible(model, theta)
    if system is None:
        system = mme.assemble(model, theta)
    t1, t2, _ = _trace_terms(model, theta, system, dense_cap, P)
    s2 = theta.sigma2
    M = np.zeros((model.m + 1, model.m + 1))
    M[0, 0] = 0.5 * (model.n - model.p) / s2**2
    M[0, 1:] = M[1:, 0] = t1 / (2.0 * s2)
    M[1:, 1:] = 0.5 * t2
    return InfoMatrix(kind=FISHER, values=_sym(M))


def average(model: Model, theta: Theta,
            system: mme.MMESystem | None = None) -> InfoMatrix:
    """Average information: quadratic forms only, no traces, no dense P."""
    require_admissible(model, theta)
    if system is None:
        system = mme.assemble(model, theta)
    ypy, quad1, quad2, _ = _quad_forms(model, theta, system)
    s2 = theta.sigma2
    M = np.zeros((model.m + 1, model.m + 1))
    M[0, 0] = ypy / (2.0 * s2**3)
    M[0, 1:] = M[1:, 0] = quad1 / (2.0 * s2**2)
    M[1:, 1:] = quad2 / (2.0 * s2)
    return InfoMatrix(kind=AVERAGE, values=_sym(M))


def splitting_residual(model: Model, theta: Theta,
                       system: mme.MMESystem | None = None,
                       P: np.ndarray | None = None,
                       dense_cap: int | None = None) -> InfoMatrix:
    """Zero-mean remainder of the split: (observed + fisher)/2 - average."""
    require_admissible(model, theta)
    if system is None:
        system = mme.assemble(model, theta)
    _, quad1, _, quad_d2 = _quad_forms(model, theta, system)
    t1, _, t_d2 = _trace_terms(model, theta, system, dense_cap, P)
    s2 = theta.sigma2
    M = np.zeros((model.m + 1, model.m + 1))
    M[0, 1:] = M[1:, 0] = t1 / (4.0 * s2) - quad1 / (4.0 * s2**2)
    M[1:, 1:] = 0.25 * (t_d2 - quad_d2 / s2)
    return InfoMatrix(kind=SPLITTING_RESIDUAL, values=_sym(M))

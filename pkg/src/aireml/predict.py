"""BLUE/BLUP extraction and uncertainty at a fitted theta.

The joint covariance of (tau_hat, u_tilde - u) is sigma2 * C^-1; the
full random-effects block is dense even when C is sparse, so it is
gated behind a size cap and only its diagonal (prediction-error
variances) is returned above the cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import linalg

from . import mme
from .model import Model, Theta, require_admissible

if TYPE_CHECKING:  # pragma: no cover
    from .solver import IterationTrace

B_CAP = 2000   # default upper b for materializing the full C^-1


@dataclass(frozen=True)
class EffectEstimates:
    """Fixed-effect estimates and random-effect predictions with
    covariance blocks of sigma2 * C^-1."""

    tau_hat: np.ndarray
    tau_cov: np.ndarray
    u_tilde: np.ndarray
    u_cov: np.ndarray | None      # None when b exceeds the cap
    u_pev_diag: np.ndarray        # prediction-error variances, always present


@dataclass(frozen=True)
class FitReport:
    """Everything a fit produces: estimates, uncertainty, diagnostics."""

    theta_hat: Theta
    se_theta: np.ndarray          # (m+1,) standard errors for (sigma2, kappa)
    info_kind_used: str           # information matrix behind se_theta
    tau_hat: np.ndarray
    tau_cov: np.ndarray
    u_tilde: np.ndarray
    u_cov: np.ndarray | None
    u_pev_diag: np.ndarray
    loglik: float
    trace: "IterationTrace"
    status: str                   # converged | max_iter | error:<kind>
    variant: str
    n_iter: int

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def effects_with_uncertainty(model: Model, theta: Theta,
                             system: mme.MMESystem | None = None,
                             b_cap: int | None = None) -> EffectEstimates:
    """Solve the mixed-model equations and scale C^-1 by sigma2."""
    require_admissible(model, theta)
    if system is None:
        system = mme.assemble(model, theta)
    cap = B_CAP if b_cap is None else b_cap
    tau_hat, u_tilde = mme.solve_effects(system, model.dataset.y)
    s2 = theta.sigma2
    p, b = model.p, model.b
    if b <= cap:
        cinv = linalg.cho_solve(system.factor, check_finite=False, b=np.eye(p + b))
        cov = s2 * 0.5 * (cinv + cinv.T)
        return EffectEstimates(tau_hat=tau_hat, tau_cov=cov[:p, :p],
                               u_tilde=u_tilde, u_cov=cov[p:, p:],
                               u_pev_diag=np.diag(cov[p:, p:]).copy())
    tau_cov = s2 * mme.cxx_block(system)
    pev = np.empty(b)
    for j in range(b):           # columnwise solves: diagonal of C^-1 only
        e = np.zeros(p + b)
        e[p + j] = 1.0
        pev[j] = s2 * linalg.cho_solve(system.factor, check_finite=False, b=e)[p + j]
    return EffectEstimates(tau_hat=tau_hat, tau_cov=tau_cov,
                           u_tilde=u_tilde, u_cov=None, u_pev_diag=pev)

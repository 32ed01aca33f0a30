"""Restricted log-likelihood and its score vector.

The restricted log-likelihood of the variance parameters is

    l_R = -1/2 [ (n-p) log sigma2 + log|H| + log|X^T H^-1 X|
                 + y^T P y / sigma2 ]  -  (n-p)/2 * log(2*pi)

with the additive constant pinned so the value coincides exactly with
the marginal log-density of the error contrasts (see oracle module),
not merely up to a constant.  Determinants are evaluated by dense
Cholesky under the desk-scale size cap; the quadratic form goes through
the factorized mixed-model equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import mme
from .errors import FactorizationFailure, SizeCapExceeded
from .model import Model, Theta, build_H, dH_matvec, require_admissible


@dataclass(frozen=True)
class ScoreVector:
    """Gradient of l_R in the fixed parameter order (sigma2, kappa_1..m)."""

    s_sigma2: float
    s_kappa: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.s_sigma2], self.s_kappa])

    def inf_norm(self) -> float:
        return float(np.abs(self.as_vector()).max())


def _logdet_terms(model: Model, theta: Theta) -> tuple[float, float]:
    """(log|H|, log|X^T H^-1 X|) by dense Cholesky."""
    H = build_H(model, theta)
    try:
        hc = linalg.cho_factor(H, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(f"H not positive definite: {exc}") from exc
    logdet_H = 2.0 * float(np.sum(np.log(np.diag(hc[0]))))
    X = model.dataset.X
    XtHiX = X.T @ linalg.cho_solve(hc, check_finite=False, b=X)
    try:
        xc = linalg.cho_factor(XtHiX, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(f"X^T H^-1 X not positive definite: {exc}") from exc
    logdet_X = 2.0 * float(np.sum(np.log(np.diag(xc[0]))))
    return logdet_H, logdet_X


def log_likelihood(model: Model, theta: Theta,
                   system: mme.MMESystem | None = None,
                   dense_cap: int | None = None) -> float:
    """Restricted log-likelihood l_R at theta."""
    require_admissible(model, theta)
    cap = mme.DENSE_CAP if dense_cap is None else dense_cap
    if model.n > cap:
        raise SizeCapExceeded(model.n, cap, "dense log-determinant evaluation")
    if system is None:
        system = mme.assemble(model, theta)
    y = model.dataset.y
    ypy = float(y @ mme.apply_P(system, y))
    logdet_H, logdet_X = _logdet_terms(model, theta)
    n, p = model.n, model.p
    return -0.5 * ((n - p) * np.log(theta.sigma2) + logdet_H + logdet_X
                   + ypy / theta.sigma2) - 0.5 * (n - p) * np.log(2.0 * np.pi)


def score(model: Model, theta: Theta,
          system: mme.MMESystem | None = None,
          P: np.ndarray | None = None,
          dense_cap: int | None = None) -> ScoreVector:
    """Score vector S(theta) = (s(sigma2), s(kappa_1), ..., s(kappa_m)).

    s(sigma2) = -1/2 [ (n-p)/sigma2 - y^T P y / sigma2^2 ]
    s(kappa_i) = -1/2 [ tr(P dH_i) - y^T P dH_i P y / sigma2 ]

    Quadratic forms go through the factorized system; the trace term uses
    the dense projection under the size cap.
    """
    require_admissible(model, theta)
    if system is None:
        system = mme.assemble(model, theta)
    y = model.dataset.y
    xi = mme.apply_P(system, y)
    ypy = float(y @ xi)
    s2 = theta.sigma2
    s_sigma2 = -0.5 * ((model.n - model.p) / s2 - ypy / s2**2)
    if model.m == 0:
        return ScoreVector(s_sigma2=s_sigma2, s_kappa=np.zeros(0))
    if P is None:
        P = mme.projection_dense(system, dense_cap)
    s_kappa = np.empty(model.m)
    for i in range(model.m):
        quad = float(xi @ dH_matvec(model, theta, i, xi))
        s_kappa[i] = -0.5 * (mme.trace_P_dH(model, theta, P, i) - quad / s2)
    return ScoreVector(s_sigma2=s_sigma2, s_kappa=s_kappa)

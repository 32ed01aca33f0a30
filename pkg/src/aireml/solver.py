"""Damped Newton-type iteration for the restricted likelihood.

Each step solves  Info(theta_k) delta = S(theta_k)  with the observed
(`newton`), Fisher (`fisher`) or average (`ai`) information matrix and
advances theta_k by the largest step fraction in {1, 1/2, 1/4, ...}
that keeps theta admissible and does not decrease the restricted
log-likelihood (to within its floating-point resolution).  An
indefinite observed matrix falls back to the average matrix for that
step; if a solve still fails (or no fraction of the step is acceptable)
the matrix is retried with Levenberg-style diagonal inflation before
giving up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import information, likelihood, mme, predict
from .errors import DegenerateResidual, FactorizationFailure, InadmissibleTheta
from .model import LOG, Model, Theta, is_admissible, require_admissible

NEWTON = "newton"
FISHER = "fisher"
AI = "ai"
VARIANTS = (NEWTON, FISHER, AI)

DEGENERATE_TOL = 1e-12          # y^T P y below this times ||y||^2 is degenerate
LEVENBERG_MU0 = 1e-6
LEVENBERG_RETRIES = 6
INIT_GAMMA = 0.1                # starting variance ratio for every group
INIT_PHI = 1.0                  # starting residual partition coefficient
MONOTONE_EPS_FACTOR = 16        # ties within this many ulps of l_R still accept


def monotone_slack(loglik: float) -> float:
    """Largest decrease of l_R an accepted step may show: floating-point
    resolution of the log-likelihood value, nothing more.  Near the
    optimum the true improvement of a Newton step falls below this
    resolution, and a strict non-decrease test would deadlock."""
    return MONOTONE_EPS_FACTOR * np.finfo(float).eps * (1.0 + abs(loglik))


@dataclass(frozen=True)
class SolveOptions:
    """Options for fit(); defaults follow the production configuration."""

    variant: str = AI
    max_iter: int = 100
    tol: float = 1e-8
    init: Theta | None = None       # None means automatic initialization
    step_halving_max: int = 20
    dense_cap: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    theta: np.ndarray          # (sigma2, kappa) at iteration k
    loglik: float
    score_norm: float
    halvings: int              # step halvings spent reaching this iterate
    variant: str               # information matrix actually used


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)

    def append(self, rec: IterationRecord) -> None:
        self.records.append(rec)

    def loglik_values(self) -> np.ndarray:
        return np.array([r.loglik for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def initial_theta(model: Model) -> Theta:
    """Starting point: sigma2 from the fixed-effects-only residual mean
    square, 0.1 for every variance ratio, 1 for every partition
    coefficient (log scale: their logarithms)."""
    y, X = model.dataset.y, model.dataset.X
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    s_r = float(resid @ resid)
    if s_r <= DEGENERATE_TOL * float(y @ y):
        raise DegenerateResidual(
            "response lies in the span of X; variance scale not estimable")
    sigma2 = s_r / (model.n - model.p)
    kappa = np.concatenate([
        np.full(model.n_groups, INIT_GAMMA),
        np.full(model.n_residual_params, INIT_PHI),
    ])
    if model.spec.scale == LOG:
        kappa = np.log(kappa)
    return Theta(sigma2=sigma2, kappa=kappa)


@dataclass
class _EvalState:
    theta: Theta
    system: mme.MMESystem
    loglik: float
    score: likelihood.ScoreVector
    score_norm: float
    P: np.ndarray | None        # dense projection, shared by score and info


def _evaluate(model: Model, theta: Theta, dense_cap) -> _EvalState:
    system = mme.assemble(model, theta)
    ll = likelihood.log_likelihood(model, theta, system=system, dense_cap=dense_cap)
    return _finish_evaluation(model, theta, system, ll, dense_cap)


def _finish_evaluation(model, theta, system, loglik, dense_cap) -> _EvalState:
    y = model.dataset.y
    ypy = float(y @ mme.apply_P(system, y))
    if ypy <= DEGENERATE_TOL * float(y @ y):
        raise DegenerateResidual(
            f"y^T P y = {ypy:.3e} is numerically zero at theta = {theta.as_vector()}")
    P = mme.projection_dense(system, dense_cap) if model.m else None
    sc = likelihood.score(model, theta, system=system, P=P, dense_cap=dense_cap)
    return _EvalState(theta=theta, system=system, loglik=loglik,
                      score=sc, score_norm=sc.inf_norm(), P=P)


def _try_candidate(model: Model, theta: Theta, dense_cap):
    """(loglik, system) at a candidate, or (None, None) where the candidate
    is inadmissible or lies in a numerically indefinite region."""
    try:
        system = mme.assemble(model, theta)
        ll = likelihood.log_likelihood(model, theta, system=system, dense_cap=dense_cap)
        return ll, system
    except (InadmissibleTheta, FactorizationFailure, linalg.LinAlgError):
        return None, None


def _info_values(model, state, variant, dense_cap) -> np.ndarray:
    if variant == NEWTON:
        return information.observed(model, state.theta, system=state.system,
                                    P=state.P, dense_cap=dense_cap).values
    if variant == FISHER:
        return information.fisher(model, state.theta, system=state.system,
                                  P=state.P, dense_cap=dense_cap).values
    return information.average(model, state.theta, system=state.system).values


def _direction(M: np.ndarray, s: np.ndarray) -> np.ndarray | None:
    try:
        return linalg.cho_solve(linalg.cho_factor(0.5 * (M + M.T)), s)
    except linalg.LinAlgError:
        return None


def _candidate_directions(model, state, variant, dense_cap):
    """Yield (label, delta) in preference order: the variant's own matrix,
    the average fallback for newton, then Levenberg-inflated retries."""
    s = state.score.as_vector()
    base = _info_values(model, state, variant, dense_cap)
    delta = _direction(base, s)
    if delta is not None:
        yield variant, delta
    label = variant
    if variant == NEWTON:
        base = _info_values(model, state, AI, dense_cap)
        label = AI
        delta = _direction(base, s)
        if delta is not None:
            yield label, delta
    d = np.abs(np.diag(base))
    d[d == 0.0] = 1.0            # guard: inflation must perturb every row
    for r in range(LEVENBERG_RETRIES):
        mu = LEVENBERG_MU0 * 10.0**r
        delta = _direction(base + mu * np.diag(d), s)
        if delta is not None:
            yield f"{label}+lm", delta


def fit(model: Model, options: SolveOptions | None = None) -> predict.FitReport:
    """Maximize the restricted log-likelihood; returns a full FitReport.

    Convergence is declared on the score norm: ||S(theta)||_inf <= tol.
    Accepted iterates never decrease the log-likelihood beyond its
    floating-point resolution (see monotone_slack).
    """
    opts = options or SolveOptions()
    theta = opts.init if opts.init is not None else initial_theta(model)
    require_admissible(model, theta)

    trace = IterationTrace()
    state = _evaluate(model, theta, opts.dense_cap)
    status = "max_iter"
    arrival_halvings = 0
    arrival_variant = opts.variant

    for k in range(opts.max_iter + 1):
        trace.append(IterationRecord(
            k=k, theta=state.theta.as_vector(), loglik=state.loglik,
            score_norm=state.score_norm, halvings=arrival_halvings,
            variant=arrival_variant))
        if state.score_norm <= opts.tol:
            status = "converged"
            break
        if k == opts.max_iter:
            break

        accepted = None
        tried_any_direction = False
        floor = state.loglik - monotone_slack(state.loglik)
        for label, delta in _candidate_directions(model, state, opts.variant, opts.dense_cap):
            tried_any_direction = True
            vec = state.theta.as_vector()
            for j in range(opts.step_halving_max):
                cand = Theta.from_vector(vec + 0.5**j * delta)
                if not is_admissible(model, cand):
                    continue
                ll, system = _try_candidate(model, cand, opts.dense_cap)
                if ll is not None and ll >= floor:
                    accepted = (cand, system, ll, j, label)
                    break
            if accepted is not None:
                break
        if accepted is None:
            status = ("error:indefinite_information" if not tried_any_direction
                      else "error:stalled")
            break

        cand, system, ll, arrival_halvings, arrival_variant = accepted
        state = _finish_evaluation(model, cand, system, ll, opts.dense_cap)

    return _build_report(model, state, trace, status, opts)


def _build_report(model, state, trace, status, opts) -> predict.FitReport:
    info = information.average(model, state.theta, system=state.system)
    se = _standard_errors(info.values)
    eff = predict.effects_with_uncertainty(model, state.theta, system=state.system)
    return predict.FitReport(
        theta_hat=state.theta, se_theta=se, info_kind_used=info.kind,
        tau_hat=eff.tau_hat, tau_cov=eff.tau_cov, u_tilde=eff.u_tilde,
        u_cov=eff.u_cov, u_pev_diag=eff.u_pev_diag,
        loglik=state.loglik, trace=trace, status=status,
        variant=opts.variant, n_iter=len(trace) - 1)


def _standard_errors(info_values: np.ndarray) -> np.ndarray:
    M = 0.5 * (info_values + info_values.T)
    try:
        cov = linalg.cho_solve(linalg.cho_factor(M), np.eye(M.shape[0]))
    except linalg.LinAlgError:
        cov = np.linalg.pinv(M)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))

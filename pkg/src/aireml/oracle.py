"""Brute-force reference implementations for tests and the check command.

Everything here is deliberately O(n^3) and independent of the production
code paths: the dense projection is evaluated from a literal matrix
inverse, log-likelihoods from the error-contrast marginal, derivatives
from central finite differences, and expectations from Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import information, likelihood, mme, simulate
from .errors import DegenerateResidual, DimensionMismatch, SizeCapExceeded
from .model import Dataset, Model, Theta, build_H, require_admissible


# ---------------------------------------------------------------------------
# Contrast transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformPair:
    """Orthogonal and oblique bases splitting R^n into the fixed-effects
    span and its error-contrast complement.

    K = [K1, K2] is orthogonal with K1 K1^T the hat matrix of X and
    K2^T X = 0.  L = [L1, L2] is nonsingular with L1^T X = I, L2^T X = 0
    and I - hat(X) = L2 (L2^T L2)^-1 L2^T.
    """

    K1: np.ndarray
    K2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray


def transform_pair(X: np.ndarray) -> TransformPair:
    """Construct K from the eigendecomposition of I - hat(X) (eigenvalues
    are 0/1; 0.5 is a safe split threshold) and L as the inverse
    transpose of [X, K2]."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    hat = X @ linalg.solve(X.T @ X, X.T)
    w, V = linalg.eigh(np.eye(n) - hat)
    K2 = V[:, w >= 0.5]
    K1 = V[:, w < 0.5]
    if K2.shape[1] != n - p or K1.shape[1] != p:
        raise DimensionMismatch(
            f"eigenvalue split produced {K1.shape[1]}+{K2.shape[1]} columns, expected {p}+{n - p}")
    L = linalg.solve(np.column_stack([X, K2]).T, np.eye(n))
    return TransformPair(K1=K1, K2=K2, L1=L[:, :p], L2=L[:, p:])


# ---------------------------------------------------------------------------
# Dense projection and the contrast-form log-likelihood
# ---------------------------------------------------------------------------


def dense_P(model: Model, theta: Theta, dense_cap: int | None = None) -> np.ndarray:
    """Literal dense P = H^-1 - H^-1 X (X^T H^-1 X)^-1 X^T H^-1."""
    cap = mme.DENSE_CAP if dense_cap is None else dense_cap
    if model.n > cap:
        raise SizeCapExceeded(model.n, cap, "dense projection oracle")
    H = build_H(model, theta)
    Hinv = linalg.inv(H)
    X = model.dataset.X
    HiX = Hinv @ X
    P = Hinv - HiX @ linalg.solve(X.T @ HiX, HiX.T)
    return 0.5 * (P + P.T)


def l2_form_loglik(model: Model, theta: Theta, dense_cap: int | None = None) -> float:
    """Log-likelihood of the error contrasts y2 = L2^T y:

        -1/2 [ (n-p) log(2 pi sigma2) + log|L2^T H L2|
               + y2^T (L2^T H L2)^-1 y2 / sigma2 ]

    The contrast basis is the orthonormal K2 scaled by
    |X^T X|^(1/(2(n-p))) so that the completed transform [L1, L2] has
    unit Gram determinant; this pins the additive constant and makes the
    value comparable to log_likelihood by plain equality.
    """
    require_admissible(model, theta)
    cap = mme.DENSE_CAP if dense_cap is None else dense_cap
    if model.n > cap:
        raise SizeCapExceeded(model.n, cap, "contrast-form log-likelihood")
    X, y = model.dataset.X, model.dataset.y
    n, p = model.n, model.p
    tp = transform_pair(X)
    scale = np.exp(np.linalg.slogdet(X.T @ X)[1] / (2.0 * (n - p)))
    L2 = scale * tp.K2
    M = L2.T @ build_H(model, theta) @ L2
    y2 = L2.T @ y
    sign, logdet_M = np.linalg.slogdet(M)
    quad = float(y2 @ linalg.solve(M, y2))
    return -0.5 * ((n - p) * np.log(2.0 * np.pi * theta.sigma2)
                   + logdet_M + quad / theta.sigma2)


# ---------------------------------------------------------------------------
# Finite-difference derivative oracles
# ---------------------------------------------------------------------------


def _steps(theta: Theta, h: float) -> np.ndarray:
    return h * (1.0 + np.abs(theta.as_vector()))


def fd_score(model: Model, theta: Theta, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of log_likelihood, one coordinate at a
    time with per-coordinate step h * (1 + |theta_i|)."""
    vec = theta.as_vector()
    steps = _steps(theta, h)
    out = np.empty(vec.size)
    for i in range(vec.size):
        e = np.zeros(vec.size)
        e[i] = steps[i]
        f_plus = likelihood.log_likelihood(model, Theta.from_vector(vec + e))
        f_minus = likelihood.log_likelihood(model, Theta.from_vector(vec - e))
        out[i] = (f_plus - f_minus) / (2.0 * steps[i])
    return out


def fd_hessian(model: Model, theta: Theta, h: float = 1e-4) -> np.ndarray:
    """Central second differences of log_likelihood, symmetrized."""
    vec = theta.as_vector()
    steps = _steps(theta, h)
    d = vec.size
    f0 = likelihood.log_likelihood(model, theta)

    def f(v):
        return likelihood.log_likelihood(model, Theta.from_vector(v))

    Hm = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = steps[i]
        Hm[i, i] = (f(vec + ei) - 2.0 * f0 + f(vec - ei)) / steps[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = steps[j]
            Hm[i, j] = Hm[j, i] = (
                f(vec + ei + ej) - f(vec + ei - ej)
                - f(vec - ei + ej) + f(vec - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return 0.5 * (Hm + Hm.T)


# ---------------------------------------------------------------------------
# Closed-form simple-model statistics and Monte Carlo checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimpleModelStats:
    """Residual sum of squares and the two variance estimators for a
    fixed-effects-only dataset."""

    s_r: float
    sigma2_ml: float           # S_R / n: biased downward by p/n * sigma2
    sigma2_reml: float         # S_R / (n - p): unbiased


def simple_model_check(dataset: Dataset) -> SimpleModelStats:
    if dataset.Z.shape[1] != 0:
        raise DimensionMismatch("simple_model_check requires a dataset with no random effects")
    y, X = dataset.y, dataset.X
    n, p = X.shape
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    s_r = float(resid @ resid)
    if s_r <= 1e-12 * float(y @ y):
        raise DegenerateResidual("response lies in the span of X")
    return SimpleModelStats(s_r=s_r, sigma2_ml=s_r / n, sigma2_reml=s_r / (n - p))


@dataclass(frozen=True)
class MLBiasResult:
    mean_ml: float
    se_ml: float
    mean_reml: float
    se_reml: float
    bias_ml: float             # Monte Carlo estimate of E(sigma2_ml) - sigma2
    expected_bias_ml: float    # -p/n * sigma2


def ml_bias_monte_carlo(X: np.ndarray, sigma2_true: float,
                        reps: int = 5000, seed: int = 0) -> MLBiasResult:
    """Monte Carlo comparison of the ML and REML variance estimators on
    y = X tau + eps with eps ~ N(0, sigma2 I); tau drops out of both."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    hat = X @ linalg.solve(X.T @ X, X.T)
    annih = np.eye(n) - hat
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    ml = np.empty(reps)
    reml = np.empty(reps)
    for r in range(reps):
        y = np.sqrt(sigma2_true) * rng.standard_normal(n)
        s_r = float(y @ (annih @ y))
        ml[r] = s_r / n
        reml[r] = s_r / (n - p)
    return MLBiasResult(
        mean_ml=float(ml.mean()), se_ml=float(ml.std(ddof=1) / np.sqrt(reps)),
        mean_reml=float(reml.mean()), se_reml=float(reml.std(ddof=1) / np.sqrt(reps)),
        bias_ml=float(ml.mean() - sigma2_true),
        expected_bias_ml=-p / n * sigma2_true)


@dataclass(frozen=True)
class MCExpectations:
    """Per-entry Monte Carlo means and standard errors for the score and
    the y-dependent information kinds at a fixed true theta."""

    reps: int
    score_mean: np.ndarray
    score_se: np.ndarray
    observed_mean: np.ndarray
    observed_se: np.ndarray
    average_mean: np.ndarray
    average_se: np.ndarray
    splitting_mean: np.ndarray
    splitting_se: np.ndarray
    fisher_values: np.ndarray   # deterministic reference


def mc_expectations(model: Model, theta_true: Theta, reps: int = 2000,
                    seed: int = 0, tau_true: np.ndarray | None = None) -> MCExpectations:
    """Simulate y at theta_true and average S, I_observed, I_average and
    I_splitting across replicates.

    The projection and every trace term depend only on the design and
    theta, so the assembled system is shared across replicates; each
    replicate contributes only quadratic forms.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100 for a meaningful Monte Carlo check")
    require_admissible(model, theta_true)
    if tau_true is None:
        tau_true = np.zeros(model.p)
    cfg = simulate.SimConfig(theta_true=theta_true, seed=seed, tau_true=tau_true)
    system = mme.assemble(model, theta_true)
    P = mme.projection_dense(system) if model.m else None
    fisher_values = information.fisher(model, theta_true, system=system, P=P).values

    d = model.m + 1
    acc = {name: (np.zeros(dim), np.zeros(dim))
           for name, dim in (("score", d), ("observed", (d, d)),
                             ("average", (d, d)), ("splitting", (d, d)))}

    def add(name, value):
        s, s2 = acc[name]
        s += value
        s2 += value * value

    for r in range(reps):
        y = simulate.simulate_y(model, cfg, replicate=r)
        m_r = model.with_response(y)
        add("score", likelihood.score(m_r, theta_true, system=system, P=P).as_vector())
        add("observed", information.observed(m_r, theta_true, system=system, P=P).values)
        add("average", information.average(m_r, theta_true, system=system).values)
        add("splitting", information.splitting_residual(m_r, theta_true, system=system, P=P).values)

    def stats(name):
        s, s2 = acc[name]
        mean = s / reps
        var = np.clip(s2 / reps - mean**2, 0.0, None) * reps / (reps - 1)
        return mean, np.sqrt(var / reps)

    score_mean, score_se = stats("score")
    obs_mean, obs_se = stats("observed")
    avg_mean, avg_se = stats("average")
    spl_mean, spl_se = stats("splitting")
    return MCExpectations(reps=reps, score_mean=score_mean, score_se=score_se,
                          observed_mean=obs_mean, observed_se=obs_se,
                          average_mean=avg_mean, average_se=avg_se,
                          splitting_mean=spl_mean, splitting_se=spl_se,
                          fisher_values=fisher_values)

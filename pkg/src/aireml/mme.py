"""Mixed-model equations: assembly, factorization, projection products.

The coefficient matrix ``C = W^T R^-1 W + blockdiag(0, G^-1)`` with
``W = [X, Z]`` is assembled and Cholesky-factorized once per theta; all
subsequent solves at that theta reuse the factorization.  Products with
the weighted projection

    P = H^-1 - H^-1 X (X^T H^-1 X)^-1 X^T H^-1
      = R^-1 - R^-1 W C^-1 W^T R^-1

are evaluated through the second (C-based) form, one factorized solve
per product; ``P y`` equals ``R^-1 e`` with ``e`` the fitted residual.
Dense n x n helpers are desk-scale tools guarded by a size cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, FactorizationFailure, SingularKernel, SizeCapExceeded
from .model import (
    Model,
    Theta,
    _SingularKernelMarker,
    dh_coeff,
    r_diag,
    require_admissible,
    structural_values,
)

DENSE_CAP = 5000   # default upper n for materializing n x n matrices


@dataclass(frozen=True)
class MMESystem:
    """Assembled coefficient matrix, right-hand side and factorization."""

    W: np.ndarray          # (n, p+b) concatenated design [X, Z]
    rhs: np.ndarray        # (p+b,)   W^T R^-1 y
    C: np.ndarray          # (p+b, p+b)
    factor: tuple          # cho_factor of C
    rinv: np.ndarray       # (n,) diagonal of R^-1
    p: int
    b: int

    @property
    def n(self) -> int:
        return self.W.shape[0]


def _g_inverse(model: Model, theta: Theta) -> np.ndarray:
    """Dense G(gamma)^-1 = blockdiag(K_g^-1 / gamma_g), shape (b, b)."""
    gammas = structural_values(model, theta)[: model.n_groups]
    Ginv = np.zeros((model.b, model.b))
    for g, (grp, sl) in enumerate(zip(model.spec.groups, model.group_slices)):
        kinv = model.kernel_inv[g]
        if isinstance(kinv, _SingularKernelMarker):
            kinv.raise_()
        block = np.eye(grp.width) if kinv is None else kinv
        Ginv[sl, sl] = block / gammas[g]
    return Ginv


def assemble(model: Model, theta: Theta) -> MMESystem:
    """Build and factorize C at the given theta.

    Raises SingularKernel for a non-invertible explicit kernel and
    FactorizationFailure when C is numerically indefinite.
    """
    require_admissible(model, theta)
    rinv = 1.0 / r_diag(model, theta)
    W = np.hstack([model.dataset.X, model.dataset.Z])
    A = rinv[:, None] * W
    C = W.T @ A
    if model.b:
        C[model.p:, model.p:] += _g_inverse(model, theta)
    try:
        factor = linalg.cho_factor(C, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(f"mixed-model coefficient matrix not PD: {exc}") from exc
    rhs = A.T @ model.dataset.y
    return MMESystem(W=W, rhs=rhs, C=C, factor=factor, rinv=rinv, p=model.p, b=model.b)


def solve_effects(system: MMESystem, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """BLUE/BLUP solution (tau_hat, u_tilde) of C (tau; u) = W^T R^-1 y."""
    y = np.asarray(y, dtype=float)
    if y.shape != (system.n,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({system.n},)")
    sol = linalg.cho_solve(system.factor, check_finite=False, b=system.W.T @ (system.rinv * y))
    return sol[: system.p], sol[system.p:]


def apply_P(system: MMESystem, v: np.ndarray) -> np.ndarray:
    """P @ v through the factorized C; accepts a vector or (n, k) matrix."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != system.n:
        raise DimensionMismatch(f"v has leading dimension {v.shape[0]}, expected {system.n}")
    u = (system.rinv * v.T).T
    s = linalg.cho_solve(system.factor, check_finite=False, b=system.W.T @ u)
    return u - (system.rinv * (system.W @ s).T).T


def cxx_block(system: MMESystem) -> np.ndarray:
    """The X-block of C^-1, equal to (X^T H^-1 X)^-1, shape (p, p)."""
    e = np.zeros((system.p + system.b, system.p))
    e[: system.p, :] = np.eye(system.p)
    block = linalg.cho_solve(system.factor, check_finite=False, b=e)[: system.p, :]
    return 0.5 * (block + block.T)


def projection_dense(system: MMESystem, dense_cap: int | None = None) -> np.ndarray:
    """Materialize P = R^-1 - R^-1 W C^-1 W^T R^-1 (desk scale only)."""
    cap = DENSE_CAP if dense_cap is None else dense_cap
    if system.n > cap:
        raise SizeCapExceeded(system.n, cap, "dense projection matrix")
    A = system.rinv[:, None] * system.W
    P = np.diag(system.rinv) - A @ linalg.cho_solve(system.factor, check_finite=False, b=A.T)
    return 0.5 * (P + P.T)


def h_inverse_dense(model: Model, theta: Theta, dense_cap: int | None = None) -> np.ndarray:
    """H^-1 via the binomial-inverse route
    R^-1 - R^-1 Z (Z^T R^-1 Z + G^-1)^-1 Z^T R^-1 (desk scale only)."""
    require_admissible(model, theta)
    cap = DENSE_CAP if dense_cap is None else dense_cap
    if model.n > cap:
        raise SizeCapExceeded(model.n, cap, "dense H inverse")
    rinv = 1.0 / r_diag(model, theta)
    if model.b == 0:
        return np.diag(rinv)
    Z = model.dataset.Z
    A = rinv[:, None] * Z
    Czz = Z.T @ A + _g_inverse(model, theta)
    try:
        czz_factor = linalg.cho_factor(Czz, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(f"Z^T R^-1 Z + G^-1 not PD: {exc}") from exc
    Hinv = np.diag(rinv) - A @ linalg.cho_solve(czz_factor, check_finite=False, b=A.T)
    return 0.5 * (Hinv + Hinv.T)


# ---------------------------------------------------------------------------
# Trace contractions with dense P
#
# The derivative matrices dH_i are either Z_g K_g Z_g^T (rank <= width of
# the group) or partition-indicator diagonals, so every trace below is
# contracted through the thin factors instead of forming n x n products.
# ---------------------------------------------------------------------------


def _dh_parts(model: Model, theta: Theta, i: int):
    """(kind, payload, coeff) describing dH_i for contraction routines."""
    coeff = dh_coeff(model, theta, i)
    q = model.n_groups
    if i < q:
        Zg = model.dataset.Z[:, model.group_slices[i]]
        return "group", (Zg, model.spec.groups[i].kernel), coeff
    mask = model.residual_masks[1 + (i - q)]
    return "residual", mask, coeff


def trace_P_dH(model: Model, theta: Theta, P: np.ndarray, i: int) -> float:
    """tr(P dH_i)."""
    kind, payload, coeff = _dh_parts(model, theta, i)
    if kind == "group":
        Zg, K = payload
        A = Zg.T @ (P @ Zg)
        val = np.trace(A) if K is None else float(np.sum(A * K))
    else:
        val = float(P.diagonal()[payload].sum())
    return coeff * val


def trace_P_d2H(model: Model, theta: Theta, P: np.ndarray, i: int, j: int) -> float:
    """tr(P d2H_ij): zero on the natural scale and for i != j."""
    if model.spec.scale != "log" or i != j:
        return 0.0
    return trace_P_dH(model, theta, P, i)


def trace_pairs(model: Model, theta: Theta, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All single and pairwise trace terms at once.

    Returns (t1, t2) with t1[i] = tr(P dH_i) and t2[i, j] = tr(P dH_i P dH_j);
    P @ Z_g products are shared across pairs.
    """
    m = model.m
    t1 = np.array([trace_P_dH(model, theta, P, i) for i in range(m)])
    t2 = np.zeros((m, m))
    parts = [_dh_parts(model, theta, i) for i in range(m)]
    pz = [P @ payload[0] if kind == "group" else None
          for kind, payload, _ in parts]
    for i in range(m):
        ki, pi, ci = parts[i]
        for j in range(i, m):
            kj, pj, cj = parts[j]
            if ki == "group" and kj == "group":
                (Zi, Ki), (Zj, Kj) = pi, pj
                A = Zi.T @ pz[j]                 # Z_i^T P Z_j
                B = A if Ki is None else Ki @ A
                B = B if Kj is None else B @ Kj
                val = float(np.sum(B * A))
            elif ki == "group" and kj == "residual":
                val = _trace_group_residual(pi, pz[i], pj)
            elif ki == "residual" and kj == "group":
                val = _trace_group_residual(pj, pz[j], pi)
            else:
                val = float(np.sum(P[np.ix_(pi, pj)] ** 2))
            t2[i, j] = t2[j, i] = ci * cj * val
    return t1, t2


def _trace_group_residual(group_payload, PZg, mask) -> float:
    # tr(P Z K Z^T P D_mask) = sum over masked rows r of (P Z) K (P Z)^T [r, r]
    _, K = group_payload
    rows = PZg[mask]
    if K is None:
        return float(np.sum(rows * rows))
    return float(np.einsum("lk,km,lm->", rows, K, rows))

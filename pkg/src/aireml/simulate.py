"""Synthetic data generation from a model at a true theta.

Draws y = X tau + Z u + eps with u ~ N(0, sigma2 G) through kernel
square roots and eps ~ N(0, sigma2 R).  The generator is counter-based
(Philox) with replicate substreams spawned deterministically from the
seed, so parallel replicates reproduce bit-for-bit in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch
from .model import Model, Theta, r_diag, require_admissible, structural_values


@dataclass(frozen=True)
class SimConfig:
    """True parameters and RNG seed for data generation."""

    theta_true: Theta
    seed: int = 0
    tau_true: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "tau_true",
                           np.atleast_1d(np.asarray(self.tau_true, dtype=float)))


def _kernel_sqrt(K: np.ndarray) -> np.ndarray:
    # kinship-style kernels are often numerically semidefinite: clip at 0
    w, V = linalg.eigh(K)
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_y(model: Model, cfg: SimConfig, replicate: int = 0) -> np.ndarray:
    """One response vector; deterministic given (seed, replicate)."""
    require_admissible(model, cfg.theta_true)
    tau = cfg.tau_true
    if tau.shape != (model.p,):
        raise DimensionMismatch(f"tau_true has shape {tau.shape}, expected ({model.p},)")
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(replicate,))
    rng = np.random.Generator(np.random.Philox(ss))

    sigma2 = cfg.theta_true.sigma2
    vals = structural_values(model, cfg.theta_true)
    y = model.dataset.X @ tau
    Z = model.dataset.Z
    for g, (grp, sl) in enumerate(zip(model.spec.groups, model.group_slices)):
        z = rng.standard_normal(grp.width)
        if grp.kernel is not None:
            z = _kernel_sqrt(grp.kernel) @ z
        y += Z[:, sl] @ (np.sqrt(sigma2 * vals[g]) * z)
    y += np.sqrt(sigma2 * r_diag(model, cfg.theta_true)) * rng.standard_normal(model.n)
    return y

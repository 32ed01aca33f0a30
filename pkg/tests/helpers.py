"""Shared model builders for the test suite."""

import numpy as np

from aireml import (
    Dataset,
    RandomGroup,
    ResidualStructure,
    SimConfig,
    Theta,
    VarianceSpec,
    simulate_y,
    validate,
)


def t1_model():
    """Intercept-only dataset: y = (1, 2, 3, 4), X = ones, no random part."""
    return validate(Dataset(y=[1.0, 2.0, 3.0, 4.0], X=np.ones((4, 1)), Z=np.zeros((4, 0))),
                    VarianceSpec())


def t2_model(scale="natural"):
    """One random group of two levels on top of the t1 data."""
    Z = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
    return validate(Dataset(y=[1.0, 2.0, 3.0, 4.0], X=np.ones((4, 1)), Z=Z),
                    VarianceSpec(groups=(RandomGroup("g", 2),), scale=scale))


def one_way_model(n_levels, per_level, gamma=0.5, sigma2=1.0, seed=0, tau=1.0,
                  scale="natural"):
    """Balanced one-way layout with a simulated response."""
    n = n_levels * per_level
    Z = np.zeros((n, n_levels))
    Z[np.arange(n), np.repeat(np.arange(n_levels), per_level)] = 1.0
    model = validate(Dataset(y=np.zeros(n), X=np.ones((n, 1)), Z=Z),
                     VarianceSpec(groups=(RandomGroup("g", n_levels),), scale=scale))
    kappa = [np.log(gamma)] if scale == "log" else [gamma]
    y = simulate_y(model, SimConfig(Theta(sigma2, kappa), seed=seed, tau_true=[tau]))
    return model.with_response(y)


def random_model(rng, scale="natural", partitioned=None, with_kernels=True,
                 n_range=(12, 50)):
    """A randomized admissible (model, theta) pair with a simulated response."""
    n = int(rng.integers(*n_range))
    p = int(rng.integers(1, 4))
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(p - 1)])
    q = int(rng.integers(1, 3))
    groups, blocks = [], []
    for gi in range(q):
        w = int(rng.integers(2, 6))
        assign = rng.integers(0, w, size=n)
        assign[:w] = np.arange(w)          # every level observed at least once
        Zg = np.zeros((n, w))
        Zg[np.arange(n), assign] = 1.0
        kernel = None
        if with_kernels and rng.random() < 0.5:
            A = rng.normal(size=(w, w))
            kernel = A @ A.T / w + np.eye(w)
        groups.append(RandomGroup(f"g{gi}", w, kernel=kernel))
        blocks.append(Zg)
    if partitioned is None:
        partitioned = rng.random() < 0.5
    if partitioned:
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        residual = ResidualStructure("partitioned", labels)
    else:
        residual = ResidualStructure()
    spec = VarianceSpec(groups=tuple(groups), residual=residual, scale=scale)
    model = validate(Dataset(y=np.zeros(n), X=X, Z=np.hstack(blocks)), spec)

    values = rng.uniform(0.3, 2.0, size=model.m)
    kappa = np.log(values) if scale == "log" else values
    theta = Theta(sigma2=float(rng.uniform(0.4, 2.5)), kappa=kappa)
    y = simulate_y(model, SimConfig(theta, seed=int(rng.integers(2**31)),
                                    tau_true=rng.normal(size=p)))
    return model.with_response(y), theta

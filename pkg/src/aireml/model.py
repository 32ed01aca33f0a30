"""Linear mixed model definition and covariance-structure builders.

The model is ``y = X tau + Z u + eps`` with ``u ~ N(0, sigma2 * G)`` and
``eps ~ N(0, sigma2 * R)``.  ``G`` is blockdiagonal over random groups,
each block a known PSD kernel scaled by a variance ratio ``gamma_g``;
``R`` is the identity or a diagonal matrix constant within disjoint
observation partitions (one partition pinned to coefficient 1 so the
global scale stays with ``sigma2``).  The marginal covariance shape is
``H = R + Z G Z^T``, so ``var(y) = sigma2 * H``.

Structural parameters ``kappa = (gamma, phi)`` are carried either on the
natural scale (positive values, ``H`` affine in ``kappa``) or on the log
scale (unconstrained values, nonzero second derivatives of ``H``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    InadmissibleTheta,
    IndexOutOfRange,
    NonPSDKernel,
    RankDeficientX,
    SingularKernel,
)

RANK_TOL = 1e-10       # pivot ratio below which X is declared rank deficient
PSD_TOL = 1e-10        # relative eigenvalue tolerance for kernel PSD check

NATURAL = "natural"
LOG = "log"

IDENTITY = "identity"
PARTITIONED = "partitioned"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Observations and design matrices.

    y : (n,) response vector
    X : (n, p) fixed-effects design, full column rank, n > p
    Z : (n, b) random-effects design; b == 0 means no random effects
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _freeze(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "X", _freeze(np.atleast_2d(np.asarray(self.X, dtype=float))))
        z = np.asarray(self.Z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(len(z), -1) if z.size else z.reshape(len(self.y), 0)
        object.__setattr__(self, "Z", _freeze(z))


@dataclass(frozen=True)
class RandomGroup:
    """One random-effects block: `width` levels sharing a scale parameter.

    kernel=None means the identity kernel; otherwise a symmetric PSD
    (width x width) matrix, e.g. a kinship matrix.
    """

    name: str
    width: int
    kernel: np.ndarray | None = None

    def __post_init__(self):
        if self.kernel is not None:
            object.__setattr__(self, "kernel", _freeze(np.asarray(self.kernel, dtype=float)))


@dataclass(frozen=True)
class ResidualStructure:
    """Diagonal residual covariance shape.

    kind='identity' has no parameters (R = I).  kind='partitioned' scales
    each observation partition by its own phi, with the first partition
    (in sorted label order) pinned to 1 for identifiability.
    """

    kind: str = IDENTITY
    partition: np.ndarray | None = None

    def __post_init__(self):
        if self.partition is not None:
            object.__setattr__(self, "partition", np.asarray(self.partition))


@dataclass(frozen=True)
class VarianceSpec:
    """Parametric covariance structure: ordered groups, residual, scale."""

    groups: tuple = ()
    residual: ResidualStructure = field(default_factory=ResidualStructure)
    scale: str = NATURAL

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))


@dataclass(frozen=True)
class Theta:
    """Variance parameter vector (sigma2, kappa).

    sigma2 is always on the natural (positive) scale.  kappa carries the
    structural parameters on the scale declared by VarianceSpec.
    """

    sigma2: float
    kappa: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "kappa", _freeze(np.atleast_1d(np.asarray(self.kappa, dtype=float))))

    def as_vector(self) -> np.ndarray:
        """Stack as (sigma2, kappa_1..kappa_m)."""
        return np.concatenate([[self.sigma2], self.kappa])

    @staticmethod
    def from_vector(vec) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        return Theta(sigma2=vec[0], kappa=vec[1:])


@dataclass(frozen=True)
class Model:
    """Validated, immutable bundle of a Dataset and a VarianceSpec.

    Construct through validate(); carries pre-computed structure used by
    the numeric modules (group column slices, kernel inverses, residual
    partition masks).
    """

    dataset: Dataset
    spec: VarianceSpec
    n: int
    p: int
    b: int
    m: int
    group_slices: tuple
    kernel_inv: tuple            # per group: inverse of explicit kernel, or None
    residual_labels: tuple       # sorted partition labels ([] for identity R)
    residual_masks: tuple        # boolean mask per label, aligned with labels
    # theta-independent Z_g K_g Z_g^T bases, shared across with_response
    # copies; idempotent to populate, so benign under concurrent reads
    _base_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_groups(self) -> int:
        return len(self.spec.groups)

    @property
    def n_residual_params(self) -> int:
        return max(len(self.residual_labels) - 1, 0)

    def parameter_names(self) -> list:
        """Names for (sigma2, kappa) in solver order."""
        names = ["sigma2"]
        names += [f"gamma:{g.name}" for g in self.spec.groups]
        names += [f"phi:{lab}" for lab in self.residual_labels[1:]]
        return names

    def with_response(self, y) -> "Model":
        """Same design and structure with a replaced response vector."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise DimensionMismatch(f"replacement y has shape {y.shape}, expected ({self.n},)")
        ds = Dataset(y=y, X=self.dataset.X, Z=self.dataset.Z)
        return Model(ds, self.spec, self.n, self.p, self.b, self.m,
                     self.group_slices, self.kernel_inv,
                     self.residual_labels, self.residual_masks,
                     self._base_cache)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=a.dtype, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(dataset: Dataset, spec: VarianceSpec) -> Model:
    """Check dimensions, rank and kernel admissibility; return a Model.

    Raises RankDeficientX, DimensionMismatch or NonPSDKernel.
    """
    y, X, Z = dataset.y, dataset.X, dataset.Z
    if y.ndim != 1:
        raise DimensionMismatch(f"y must be a vector, got shape {y.shape}")
    n = y.shape[0]
    if X.ndim != 2 or X.shape[0] != n:
        raise DimensionMismatch(f"X has shape {X.shape}, expected ({n}, p)")
    p = X.shape[1]
    if n < 1 or p < 1:
        raise DimensionMismatch("need n >= 1 and p >= 1")
    if n <= p:
        raise DimensionMismatch(f"need n > p for a residual likelihood, got n={n}, p={p}")
    if Z.ndim != 2 or Z.shape[0] != n:
        raise DimensionMismatch(f"Z has shape {Z.shape}, expected ({n}, b)")
    b = Z.shape[1]

    _check_full_rank(X)

    if spec.scale not in (NATURAL, LOG):
        raise DimensionMismatch(f"unknown scale {spec.scale!r}")

    widths = [g.width for g in spec.groups]
    if any(w < 1 for w in widths):
        raise DimensionMismatch("group widths must be positive")
    if sum(widths) != b:
        raise DimensionMismatch(
            f"Z has {b} columns but group widths sum to {sum(widths)}")

    slices = []
    start = 0
    for w in widths:
        slices.append(slice(start, start + w))
        start += w

    kernel_inv = []
    for g in spec.groups:
        if g.kernel is None:
            kernel_inv.append(None)
            continue
        K = g.kernel
        if K.shape != (g.width, g.width):
            raise DimensionMismatch(
                f"kernel of group {g.name!r} has shape {K.shape}, expected ({g.width}, {g.width})")
        scale = max(np.abs(K).max(), 1.0)
        if np.abs(K - K.T).max() > 1e-10 * scale:
            raise NonPSDKernel(f"kernel of group {g.name!r} is not symmetric")
        lam = linalg.eigvalsh(K)
        lam_max = max(abs(lam[0]), abs(lam[-1]))
        if lam_max > 0 and lam[0] < -PSD_TOL * lam_max:
            raise NonPSDKernel(
                f"kernel of group {g.name!r} has eigenvalue {lam[0]:.3e} "
                f"(min allowed {-PSD_TOL * lam_max:.3e})")
        # inverse cached once: G^-1 = blockdiag(K_g^-1 / gamma_g) is needed at
        # every theta but K_g^-1 is theta-independent; a PSD-but-singular
        # kernel stays valid for simulation and fails only at assembly
        try:
            c, low = linalg.cho_factor(K)
            kernel_inv.append(_freeze(linalg.cho_solve((c, low), np.eye(g.width))))
        except linalg.LinAlgError:
            kernel_inv.append(_singular_marker(g.name))

    residual = spec.residual
    if residual.kind not in (IDENTITY, PARTITIONED):
        raise DimensionMismatch(f"unknown residual kind {residual.kind!r}")
    labels: tuple = ()
    masks: tuple = ()
    if residual.kind == PARTITIONED:
        if residual.partition is None:
            raise DimensionMismatch("partitioned residual requires a partition vector")
        part = residual.partition
        if part.shape != (n,):
            raise DimensionMismatch(
                f"partition vector has shape {part.shape}, expected ({n},)")
        uniq = np.unique(part)
        labels = tuple(uniq.tolist())
        masks = tuple(_freeze(part == u) for u in uniq)

    m = len(spec.groups) + max(len(labels) - 1, 0)
    return Model(dataset=dataset, spec=spec, n=n, p=p, b=b, m=m,
                 group_slices=tuple(slices), kernel_inv=tuple(kernel_inv),
                 residual_labels=labels, residual_masks=masks)


class _SingularKernelMarker:
    """Placeholder for a kernel whose inverse does not exist."""

    def __init__(self, name):
        self.name = name

    def raise_(self):
        raise SingularKernel(f"kernel of group {self.name!r} is not invertible")


def _singular_marker(name):
    return _SingularKernelMarker(name)


def _check_full_rank(X: np.ndarray) -> None:
    _, R, _ = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0 or d[-1] < RANK_TOL * d[0]:
        raise RankDeficientX(
            f"X is rank deficient: pivot ratio {0.0 if d.size == 0 or d[0] == 0 else d[-1] / d[0]:.3e}")


# ---------------------------------------------------------------------------
# Parameter mapping
# ---------------------------------------------------------------------------


def require_admissible(model: Model, theta: Theta) -> None:
    """Raise InadmissibleTheta unless theta satisfies the scale constraints."""
    if theta.kappa.shape != (model.m,):
        raise DimensionMismatch(
            f"kappa has shape {theta.kappa.shape}, expected ({model.m},)")
    if not np.isfinite(theta.sigma2) or theta.sigma2 <= 0.0:
        raise InadmissibleTheta(f"sigma2 must be positive, got {theta.sigma2}")
    if not np.all(np.isfinite(theta.kappa)):
        raise InadmissibleTheta("kappa contains non-finite entries")
    if model.spec.scale == NATURAL and np.any(theta.kappa <= 0.0):
        raise InadmissibleTheta(
            f"natural-scale parameters must be positive, got {theta.kappa}")


def is_admissible(model: Model, theta: Theta) -> bool:
    try:
        require_admissible(model, theta)
    except InadmissibleTheta:
        return False
    return True


def structural_values(model: Model, theta: Theta) -> np.ndarray:
    """kappa mapped to the natural (positive) scale."""
    if model.spec.scale == LOG:
        return np.exp(theta.kappa)
    return theta.kappa.copy()


def dh_coeff(model: Model, theta: Theta, i: int) -> float:
    """Chain-rule factor d(value_i)/d(kappa_i): 1 on the natural scale,
    exp(kappa_i) on the log scale."""
    if model.spec.scale == LOG:
        return float(np.exp(theta.kappa[i]))
    return 1.0


def r_diag(model: Model, theta: Theta) -> np.ndarray:
    """Diagonal of R(phi); ones unless the residual is partitioned."""
    d = np.ones(model.n)
    q = model.n_groups
    vals = structural_values(model, theta)
    for r, mask in enumerate(model.residual_masks[1:]):
        d[mask] = vals[q + r]
    return d


def _check_index(model: Model, i: int) -> None:
    if not 0 <= i < model.m:
        raise IndexOutOfRange(f"parameter index {i} outside [0, {model.m})")


# ---------------------------------------------------------------------------
# Covariance builders
# ---------------------------------------------------------------------------

_BASE_CACHE_MAX_N = 2048   # above this, n x n group bases are not retained


def _group_base(model: Model, g: int) -> np.ndarray:
    """Z_g K_g Z_g^T, cached (theta-independent) at desk scale."""
    cached = model._base_cache.get(g)
    if cached is not None:
        return cached
    grp = model.spec.groups[g]
    Zg = model.dataset.Z[:, model.group_slices[g]]
    base = Zg @ Zg.T if grp.kernel is None else Zg @ grp.kernel @ Zg.T
    if model.n <= _BASE_CACHE_MAX_N:
        model._base_cache[g] = base
    return base


def build_H(model: Model, theta: Theta) -> np.ndarray:
    """Marginal covariance shape H = R(phi) + Z G(gamma) Z^T (n x n)."""
    require_admissible(model, theta)
    H = np.diag(r_diag(model, theta))
    vals = structural_values(model, theta)
    for g in range(model.n_groups):
        H += vals[g] * _group_base(model, g)
    return H


def dH(model: Model, theta: Theta, i: int) -> np.ndarray:
    """First derivative of H with respect to kappa_i (n x n)."""
    require_admissible(model, theta)
    _check_index(model, i)
    coeff = dh_coeff(model, theta, i)
    q = model.n_groups
    if i < q:
        return coeff * _group_base(model, i)
    mask = model.residual_masks[1 + (i - q)]
    return coeff * np.diag(mask.astype(float))


def d2H(model: Model, theta: Theta, i: int, j: int) -> np.ndarray:
    """Second derivative of H: zero on the natural scale (H affine in
    kappa); on the log scale equals dH_i when i == j, zero otherwise."""
    require_admissible(model, theta)
    _check_index(model, i)
    _check_index(model, j)
    if model.spec.scale == LOG and i == j:
        return dH(model, theta, i)
    return np.zeros((model.n, model.n))


def dH_matvec(model: Model, theta: Theta, i: int, v: np.ndarray) -> np.ndarray:
    """dH_i @ v without materializing the n x n matrix."""
    _check_index(model, i)
    coeff = dh_coeff(model, theta, i)
    q = model.n_groups
    if i < q:
        grp = model.spec.groups[i]
        Zg = model.dataset.Z[:, model.group_slices[i]]
        t = Zg.T @ v
        if grp.kernel is not None:
            t = grp.kernel @ t
        return coeff * (Zg @ t)
    mask = model.residual_masks[1 + (i - q)]
    out = np.zeros_like(v)
    out[mask] = coeff * v[mask]
    return out

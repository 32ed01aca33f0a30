"""Run configuration and dataset ingestion for the command line.

The configuration is a YAML document with a fixed key set (documented in
the README).  Column encodings are deterministic: an intercept column is
always prepended to X, fixed factor columns become indicator columns
with the alphabetically-first level dropped, and random factor columns
become full indicator blocks with levels in alphabetical order (kernel
file rows must follow that order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError
from .model import Dataset, RandomGroup, ResidualStructure, Theta, VarianceSpec

NUMERIC = "numeric"
FACTOR = "factor"


@dataclass(frozen=True)
class FixedTerm:
    name: str
    kind: str                   # numeric | factor


@dataclass(frozen=True)
class RandomTerm:
    factor: str
    kernel: str | None = None   # path to a dense no-header CSV kernel


@dataclass(frozen=True)
class SimulateSection:
    n: int
    seed: int
    tau_true: tuple
    theta_true_sigma2: float
    theta_true_kappa: tuple
    levels: dict                # random factor name -> level count
    partitions: int = 0         # partition count for partitioned residual


@dataclass(frozen=True)
class RunConfig:
    response: str
    fixed: tuple = ()
    random: tuple = ()
    residual_kind: str = "identity"
    residual_partition: str | None = None
    variant: str = "ai"
    scale: str = "natural"
    tol: float = 1e-8
    max_iter: int = 100
    init: Theta | None = None
    report_path: str | None = None
    trace_path: str | None = None
    sim: SimulateSection | None = None


@dataclass(frozen=True)
class DesignInfo:
    """Names behind the encoded design, for reporting."""

    fixed_names: tuple
    random_names: tuple          # one name per Z column: "factor=level"
    partition_labels: tuple


# ---------------------------------------------------------------------------
# Configuration parsing
# ---------------------------------------------------------------------------


def _require_keys(mapping, allowed, required, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}.{key}'")
    for key in required:
        if key not in mapping:
            raise ConfigError(f"missing required key '{where}.{key}'")


def load_config(path: str) -> RunConfig:
    """Parse and structurally validate a YAML run configuration."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")
    _require_keys(raw, {"model", "solver", "output", "simulate"}, {"model"}, "<root>")

    model_sec = raw["model"]
    _require_keys(model_sec, {"response", "fixed", "random", "residual"},
                  {"response"}, "model")
    response = str(model_sec["response"])

    fixed = []
    for i, item in enumerate(model_sec.get("fixed") or []):
        _require_keys(item, {"name", "type"}, {"name", "type"}, f"model.fixed[{i}]")
        kind = str(item["type"])
        if kind not in (NUMERIC, FACTOR):
            raise ConfigError(
                f"model.fixed[{i}].type must be 'numeric' or 'factor', got {kind!r}")
        fixed.append(FixedTerm(name=str(item["name"]), kind=kind))

    random_terms = []
    for i, item in enumerate(model_sec.get("random") or []):
        _require_keys(item, {"factor", "kernel"}, {"factor"}, f"model.random[{i}]")
        kernel = item.get("kernel")
        random_terms.append(RandomTerm(factor=str(item["factor"]),
                                       kernel=None if kernel is None else str(kernel)))

    residual_kind, residual_partition = "identity", None
    if "residual" in model_sec and model_sec["residual"] is not None:
        res = model_sec["residual"]
        _require_keys(res, {"kind", "partition"}, {"kind"}, "model.residual")
        residual_kind = str(res["kind"])
        if residual_kind not in ("identity", "partitioned"):
            raise ConfigError(
                f"model.residual.kind must be 'identity' or 'partitioned', got {residual_kind!r}")
        if residual_kind == "partitioned":
            if "partition" not in res or res["partition"] is None:
                raise ConfigError("missing required key 'model.residual.partition'")
            residual_partition = str(res["partition"])

    variant, scale, tol, max_iter, init = "ai", "natural", 1e-8, 100, None
    if "solver" in raw and raw["solver"] is not None:
        sol = raw["solver"]
        _require_keys(sol, {"variant", "scale", "tol", "max_iter", "init"}, (), "solver")
        variant = str(sol.get("variant", variant))
        if variant not in ("newton", "fisher", "ai"):
            raise ConfigError(f"solver.variant must be newton|fisher|ai, got {variant!r}")
        scale = str(sol.get("scale", scale))
        if scale not in ("natural", "log"):
            raise ConfigError(f"solver.scale must be natural|log, got {scale!r}")
        tol = float(sol.get("tol", tol))
        max_iter = int(sol.get("max_iter", max_iter))
        if sol.get("init") is not None:
            ini = sol["init"]
            _require_keys(ini, {"sigma2", "kappa"}, {"sigma2"}, "solver.init")
            init = Theta(sigma2=float(ini["sigma2"]),
                         kappa=np.asarray(ini.get("kappa", []), dtype=float))

    report_path = trace_path = None
    if "output" in raw and raw["output"] is not None:
        out = raw["output"]
        _require_keys(out, {"report", "trace"}, (), "output")
        report_path = out.get("report")
        trace_path = out.get("trace")

    sim = None
    if "simulate" in raw and raw["simulate"] is not None:
        ss = raw["simulate"]
        _require_keys(ss, {"n", "seed", "tau_true", "theta_true", "levels", "partitions"},
                      {"n", "seed", "tau_true", "theta_true"}, "simulate")
        _require_keys(ss["theta_true"], {"sigma2", "kappa"}, {"sigma2"}, "simulate.theta_true")
        sim = SimulateSection(
            n=int(ss["n"]), seed=int(ss["seed"]),
            tau_true=tuple(float(v) for v in ss["tau_true"]),
            theta_true_sigma2=float(ss["theta_true"]["sigma2"]),
            theta_true_kappa=tuple(float(v) for v in ss["theta_true"].get("kappa") or []),
            levels={str(k): int(v) for k, v in (ss.get("levels") or {}).items()},
            partitions=int(ss.get("partitions", 0)))

    return RunConfig(response=response, fixed=tuple(fixed), random=tuple(random_terms),
                     residual_kind=residual_kind, residual_partition=residual_partition,
                     variant=variant, scale=scale, tol=tol, max_iter=max_iter, init=init,
                     report_path=report_path, trace_path=trace_path, sim=sim)


# ---------------------------------------------------------------------------
# Design construction
# ---------------------------------------------------------------------------


def _column(df: pd.DataFrame, name: str, where: str) -> pd.Series:
    if name not in df.columns:
        raise ConfigError(f"column {name!r} (from {where}) not found in the dataset")
    return df[name]


def _numeric(series: pd.Series, name: str) -> np.ndarray:
    try:
        return pd.to_numeric(series, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"column {name!r} is not numeric: {exc}") from exc


def _indicators(values: np.ndarray, levels: list) -> np.ndarray:
    out = np.zeros((len(values), len(levels)))
    index = {lev: j for j, lev in enumerate(levels)}
    for i, v in enumerate(values):
        out[i, index[v]] = 1.0
    return out


def load_kernel(path: str, factor: str, n_levels: int) -> np.ndarray:
    try:
        K = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read kernel file {path!r} for factor {factor!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"kernel file {path!r} is not numeric CSV: {exc}") from exc
    if K.shape != (n_levels, n_levels):
        raise ConfigError(
            f"kernel file {path!r} has shape {K.shape}, expected "
            f"({n_levels}, {n_levels}) for factor {factor!r} with {n_levels} levels")
    return K


def build_design(df: pd.DataFrame, cfg: RunConfig) -> tuple[Dataset, VarianceSpec, DesignInfo]:
    """Encode a data frame into (Dataset, VarianceSpec) per the config."""
    y = _numeric(_column(df, cfg.response, "model.response"), cfg.response)
    n = len(y)

    x_cols = [np.ones(n)]
    fixed_names = ["intercept"]
    for term in cfg.fixed:
        col = _column(df, term.name, "model.fixed")
        if term.kind == NUMERIC:
            x_cols.append(_numeric(col, term.name))
            fixed_names.append(term.name)
        else:
            values = col.astype(str).to_numpy()
            levels = sorted(set(values))
            for lev in levels[1:]:          # drop first level: intercept absorbs it
                x_cols.append((values == lev).astype(float))
                fixed_names.append(f"{term.name}={lev}")
    X = np.column_stack(x_cols)

    z_blocks = []
    groups = []
    random_names = []
    for term in cfg.random:
        col = _column(df, term.factor, "model.random")
        values = col.astype(str).to_numpy()
        levels = sorted(set(values))
        z_blocks.append(_indicators(values, levels))
        kernel = None
        if term.kernel is not None:
            kernel = load_kernel(term.kernel, term.factor, len(levels))
        groups.append(RandomGroup(name=term.factor, width=len(levels), kernel=kernel))
        random_names += [f"{term.factor}={lev}" for lev in levels]
    Z = np.hstack(z_blocks) if z_blocks else np.zeros((n, 0))

    partition_labels: tuple = ()
    residual = ResidualStructure()
    if cfg.residual_kind == "partitioned":
        col = _column(df, cfg.residual_partition, "model.residual.partition")
        labels = col.astype(str).to_numpy()
        residual = ResidualStructure(kind="partitioned", partition=labels)
        partition_labels = tuple(sorted(set(labels)))

    spec = VarianceSpec(groups=tuple(groups), residual=residual, scale=cfg.scale)
    ds = Dataset(y=y, X=X, Z=Z)
    info = DesignInfo(fixed_names=tuple(fixed_names), random_names=tuple(random_names),
                      partition_labels=partition_labels)
    return ds, spec, info


# ---------------------------------------------------------------------------
# Simulated dataset frames
# ---------------------------------------------------------------------------


def simulated_frame(cfg: RunConfig) -> pd.DataFrame:
    """Columns for a synthetic dataset honoring the config's model section.

    Factor levels are assigned round-robin with zero-padded names so the
    alphabetical level order matches the numeric one; numeric fixed
    covariates are drawn from a dedicated substream of the seed.  The
    response column is filled by the caller.
    """
    if cfg.sim is None:
        raise ConfigError("missing required key 'simulate' in the configuration")
    sim = cfg.sim
    n = sim.n
    if n < 2:
        raise ConfigError(f"simulate.n must be >= 2, got {n}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(sim.seed, spawn_key=(1, 0))))

    frame = {cfg.response: np.zeros(n)}
    for term in cfg.fixed:
        if term.kind != NUMERIC:
            raise ConfigError(
                f"simulate supports numeric fixed covariates only, got factor {term.name!r}")
        frame[term.name] = rng.standard_normal(n)
    for term in cfg.random:
        if term.factor not in sim.levels:
            raise ConfigError(f"missing key 'simulate.levels.{term.factor}'")
        width = sim.levels[term.factor]
        if width < 1:
            raise ConfigError(f"simulate.levels.{term.factor} must be >= 1")
        pad = len(str(width - 1))
        frame[term.factor] = [f"{term.factor}{i % width:0{pad}d}" for i in range(n)]
    if cfg.residual_kind == "partitioned":
        k = sim.partitions
        if k < 2:
            raise ConfigError("simulate.partitions must be >= 2 for a partitioned residual")
        pad = len(str(k - 1))
        frame[cfg.residual_partition] = [f"p{i % k:0{pad}d}" for i in range(n)]
    return pd.DataFrame(frame)

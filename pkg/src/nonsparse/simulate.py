"""Data generators and the seeded replication harness.

Designs are Gaussian with ``Cov(x_i, x_j) = (-rho)^|i-j|`` and mean 0 on the
significant coordinates, 2 elsewhere.  Coefficients outside the significant
set are drawn once per cell from ``U(-0.5, 0.15)`` with negatives zeroed.

Every replicate owns counter-based random substreams keyed by
``(master_seed, replicate_index, attempt, purpose)``, so results do not
depend on scheduling or worker count.
"""

from __future__ import annotations

import configparser
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .model_core import CoefficientTruth, Dataset
from .pipeline import FitOptions, StageError, fit
from .predict import EvaluationReport, ReplicateOutcome, evaluate_cell, predict_bundle

__all__ = [
    "ExperimentConfig",
    "ReplicateFailure",
    "SCHEMA_VERSION",
    "BETA_TYPES",
    "generate_truth",
    "generate_design",
    "generate_replicate",
    "noise_sd",
    "substream",
    "run_replicate",
    "run_experiment",
    "load_config",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_RETRIES = 3

_MAIN = (1.0, 0.4, 0.3, 0.5, 0.3, 0.3, 0.3)
BETA_TYPES = {
    "I": (_MAIN, tuple(range(7))),
    "II": (_MAIN, (0, 16, 32, 48, 64, 80, 96)),
    "III": ((1.0, 0.4, -0.3, -0.5, 0.3, 0.3, -0.3), tuple(range(7))),
    "exp3": ((1.0, -1.5, 2.0, 1.1, -3.0, 1.2, 1.8, -2.5, -2.0, 1.0), tuple(range(10))),
}
TAIL_LOW, TAIL_HIGH = -0.5, 0.15
SHIFTED_MEAN = 2.0

# purpose tags for substreams
_TRUTH, _TRAIN, _TEST, _LAMBDA = 0, 1, 2, 3
_TRUTH_SLOT = 2**32 - 1


class ReplicateFailure(RuntimeError):
    """A replicate failed on every allowed attempt."""


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 50
    p: int = 100
    rho: float = 0.1
    beta_type: str = "I"
    beta_values: tuple[float, ...] | None = None  # for beta_type="custom"
    beta_indices: tuple[int, ...] | None = None  # 0-based
    tail: str = "nonsparse_uniform"  # or sparse_zero
    r2: float | None = 0.98
    sigma_eps: float | None = None  # overrides r2 when set
    lambda_policy: str = "data_driven"  # or "fixed"
    lambda_value: float | None = None  # unit-norm scale
    sigma_policy: str = "known"  # or "estimated"
    sis_keep: int | None = None
    replicates: int = 50
    master_seed: int = 0
    test_size: int = 100
    kappa: float = 0.25
    d_pseudo: int = 1
    instrument: str = "auto"
    rank_cap: int = 3
    bandwidth_scale: float = 1.0
    whiten_approx: bool = False
    alpha_policy: str = "zero"  # or dantzig
    empty_selection: str = "strongest"  # or error
    mse_convention: str = "mean"
    label: str = ""

    def __post_init__(self):
        if self.n < 4 or self.p < 2:
            raise ValueError("need n >= 4 and p >= 2")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.beta_type not in BETA_TYPES and self.beta_type != "custom":
            raise ValueError(f"unknown beta_type {self.beta_type!r}")
        if self.beta_type == "custom" and (
            self.beta_values is None or self.beta_indices is None
            or len(self.beta_values) != len(self.beta_indices)
        ):
            raise ValueError("custom beta needs beta_values and beta_indices of equal length")
        vals, idx = self.significant()
        if max(idx) >= self.p or min(idx) < 0 or len(set(idx)) != len(idx):
            raise ValueError("significant indices must be distinct and inside [0, p)")
        if self.tail not in ("nonsparse_uniform", "sparse_zero"):
            raise ValueError(f"unknown tail law {self.tail!r}")
        if self.sigma_eps is None and (self.r2 is None or not 0.0 < self.r2 < 1.0):
            raise ValueError("give sigma_eps or r2 in (0, 1)")
        if self.sigma_eps is not None and not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")
        if self.lambda_policy not in ("data_driven", "fixed"):
            raise ValueError("lambda_policy must be data_driven or fixed")
        if self.lambda_policy == "fixed" and not (self.lambda_value and self.lambda_value > 0):
            raise ValueError("fixed lambda_policy needs a positive lambda_value")
        if self.sigma_policy not in ("known", "estimated"):
            raise ValueError("sigma_policy must be known or estimated")
        if self.alpha_policy not in ("zero", "dantzig"):
            raise ValueError("alpha_policy must be zero or dantzig")
        if self.replicates < 1 or self.test_size < 1:
            raise ValueError("replicates and test_size must be positive")

    def significant(self):
        if self.beta_type == "custom":
            return tuple(self.beta_values), tuple(self.beta_indices)
        return BETA_TYPES[self.beta_type]


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key``; no state is shared between keys."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=key)))


def generate_truth(cfg: ExperimentConfig, seed: int | None = None) -> CoefficientTruth:
    """Fixed coefficient vector for a cell; the tail is drawn once."""
    seed = cfg.master_seed if seed is None else seed
    vals, idx = cfg.significant()
    beta = np.zeros(cfg.p)
    if cfg.tail == "nonsparse_uniform":
        tail = substream(seed, _TRUTH_SLOT, _TRUTH).uniform(TAIL_LOW, TAIL_HIGH, cfg.p)
        beta[:] = np.maximum(tail, 0.0)
    beta[list(idx)] = vals
    return CoefficientTruth(beta, np.array(sorted(idx)))


def _mean_vector(p, significant):
    mu = np.full(p, SHIFTED_MEAN)
    mu[np.asarray(significant, dtype=int)] = 0.0
    return mu


def design_covariance(p: int, rho: float) -> np.ndarray:
    i = np.arange(p)
    return (-rho) ** np.abs(i[:, None] - i[None, :])


def generate_design(rng: np.random.Generator, n: int, p: int, rho: float, mu=None) -> np.ndarray:
    """Rows from ``N(mu, Sigma)`` with ``Sigma_ij = (-rho)^|i-j|`` via the AR(1) recursion."""
    zeta = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = zeta[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = -rho * X[:, j - 1] + c * zeta[:, j]
    if mu is not None:
        X += mu
    return X


def noise_sd(cfg: ExperimentConfig, truth: CoefficientTruth) -> float:
    """``sigma_eps`` directly, or solved from ``R^2 = b'Sigma b / (b'Sigma b + sigma^2)``."""
    if cfg.sigma_eps is not None:
        return float(cfg.sigma_eps)
    signal = float(truth.beta @ design_covariance(cfg.p, cfg.rho) @ truth.beta)
    return math.sqrt(signal * (1.0 - cfg.r2) / cfg.r2)


def generate_replicate(cfg: ExperimentConfig, truth: CoefficientTruth, replicate_index: int, attempt: int = 0):
    """Training and test datasets for one replicate."""
    sigma = noise_sd(cfg, truth)
    mu = _mean_vector(cfg.p, truth.significant_set)
    out = []
    for tag, rows in ((_TRAIN, cfg.n), (_TEST, cfg.test_size)):
        rng = substream(cfg.master_seed, replicate_index, attempt, tag)
        X = generate_design(rng, rows, cfg.p, cfg.rho, mu)
        y = X @ truth.beta + sigma * rng.standard_normal(rows)
        out.append(Dataset(X, y))
    return out[0], out[1]


def _fit_options(cfg: ExperimentConfig, sigma: float, lambda_seed: int, p_work: int) -> FitOptions:
    return FitOptions(
        lambda_p=cfg.lambda_value if cfg.lambda_policy == "fixed" else None,
        sigma=sigma if cfg.sigma_policy == "known" else None,
        kappa=cfg.kappa,
        lambda_seed=lambda_seed,
        sis_keep=cfg.sis_keep,
        d_pseudo=cfg.d_pseudo,
        instrument=cfg.instrument,
        rank_cap=cfg.rank_cap,
        bandwidth_scale=cfg.bandwidth_scale,
        whiten_approx=cfg.whiten_approx,
        empty_selection=cfg.empty_selection,
        alpha_policy=cfg.alpha_policy,
    )


def run_replicate(cfg: ExperimentConfig, truth: CoefficientTruth, replicate_index: int) -> ReplicateOutcome:
    """Fit and evaluate one replicate, redrawing on failure up to ``MAX_RETRIES`` times."""
    sigma = noise_sd(cfg, truth)
    errors = []
    for attempt in range(MAX_RETRIES + 1):
        train, test = generate_replicate(cfg, truth, replicate_index, attempt)
        lam_seed = int(substream(cfg.master_seed, replicate_index, attempt, _LAMBDA).integers(2**63))
        try:
            out = fit(train, _fit_options(cfg, sigma, lam_seed, cfg.p))
            bundle = predict_bundle(out, test.design)
        except (StageError, ValueError, np.linalg.LinAlgError) as exc:
            errors.append(f"attempt {attempt}: {exc}")
            log.info("replicate %d attempt %d failed: %s", replicate_index, attempt, exc)
            continue
        return ReplicateOutcome(
            selected=out.selected,
            theta_new=out.theta,
            theta_classic=out.theta_refit,
            predictions=bundle,
            y_test=test.response,
            theta_dantzig_alpha=out.theta_dantzig_alpha,
            attempts=attempt + 1,
            fallback=out.selection.fallback,
            theta_se_new=out.theta_se,
        )
    raise ReplicateFailure(f"replicate {replicate_index} failed {MAX_RETRIES + 1} times: " + "; ".join(errors))


def _run_chunk(args):
    cfg, truth, indices = args
    return [run_replicate(cfg, truth, i) for i in indices]


def run_experiment(cfg: ExperimentConfig, workers: int = 1, *, return_outcomes: bool = False):
    """Run every replicate of a cell and aggregate in replicate order.

    The report is identical for any ``workers``: each replicate draws only
    from its own substreams and the fold runs over replicate index.
    """
    truth = generate_truth(cfg)
    idx = list(range(cfg.replicates))
    if workers <= 1 or cfg.replicates == 1:
        outcomes = [run_replicate(cfg, truth, i) for i in idx]
    else:
        chunks = [idx[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [(cfg, truth, c) for c in chunks if c]))
        by_index = {}
        for c, res in zip([c for c in chunks if c], parts):
            by_index.update(zip(c, res))
        outcomes = [by_index[i] for i in idx]
    report = evaluate_cell(truth, outcomes, convention=cfg.mse_convention, label=cfg.label)
    return (report, outcomes) if return_outcomes else report


_INT = {"n", "p", "sis_keep", "replicates", "master_seed", "test_size", "d_pseudo", "rank_cap"}
_FLOAT = {"rho", "r2", "sigma_eps", "lambda_value", "kappa", "bandwidth_scale"}
_TUPLE_F = {"beta_values"}
_TUPLE_I = {"beta_indices"}
_BOOL = {"whiten_approx"}


def _coerce(key, raw: str):
    raw = raw.strip()
    if raw.lower() in ("", "none"):
        return None
    if key in _INT:
        return int(raw)
    if key in _FLOAT:
        return float(raw)
    if key in _TUPLE_F:
        return tuple(float(t) for t in raw.replace(",", " ").split())
    if key in _TUPLE_I:
        return tuple(int(t) for t in raw.replace(",", " ").split())
    if key in _BOOL:
        if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
            raise ValueError(f"{key} must be a boolean, got {raw!r}")
        return raw.lower() in ("true", "yes", "1")
    return raw


def load_config(path, **overrides) -> list[ExperimentConfig]:
    """Read an INI experiment file.

    ``[experiment]`` holds ``schema_version`` and shared settings; each
    ``[cell NAME]`` section overrides them for one cell.  Without cell
    sections the file describes a single cell.  Keyword overrides apply last.
    """
    cp = configparser.ConfigParser()
    path = Path(path)
    if not cp.read(path):
        raise FileNotFoundError(f"cannot read config {path}")
    if "experiment" not in cp:
        raise ValueError(f"{path}: missing [experiment] section")
    base = dict(cp["experiment"])
    version = base.pop("schema_version", None)
    if version is None or int(version) != SCHEMA_VERSION:
        raise ValueError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version}")
    known = {f.name for f in fields(ExperimentConfig)}
    cells = [s for s in cp.sections() if s.startswith("cell ")]
    out = []
    for name in cells or [None]:
        raw = dict(base)
        if name is not None:
            raw.update({k: v for k, v in cp[name].items() if k not in cp.defaults()})
            raw["label"] = cp[name].get("label", name[5:].strip())
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
        kw = {k: _coerce(k, v) for k, v in raw.items()}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        out.append(ExperimentConfig(**kw))
    return out

"""The three sub-model predictors and replicate-level evaluation metrics.

* ``y_full``: ``theta'Z + g(V)`` with ``V`` rebuilt from the new ``U``;
* ``y_sub_new``: ``theta'Z + gbar``, a constant offset in place of ``g``;
* ``y_sub_classic``: the least-squares refit ``theta_S'Z`` with no offset.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .instrument import InstrumentSpec
from .model_core import CoefficientTruth
from .semiparam import SemiparametricFit, estimate_g

__all__ = [
    "PredictionBundle",
    "ReplicateOutcome",
    "EvaluationReport",
    "predict_full",
    "predict_sub_new",
    "predict_sub_classic",
    "predict_bundle",
    "coefficient_error",
    "evaluate_cell",
    "report_to_csv",
    "reports_from_csv",
    "report_table",
    "MSE_CONVENTIONS",
]

log = logging.getLogger(__name__)

MSE_CONVENTIONS = ("mean", "sum")


@dataclass(frozen=True)
class PredictionBundle:
    y_full: np.ndarray
    y_sub_new: np.ndarray
    y_sub_classic: np.ndarray
    g_bar: float
    boundary_flags: int = 0


def _as2d(a, n_rows=None):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None] if n_rows is None or a.size == n_rows else a[None, :]
    return a


def predict_full(fit: SemiparametricFit, instrument: InstrumentSpec | None, Z_new, U_new, alpha=None):
    """``theta'Z_new + g_hat(V_new)``.

    ``instrument=None`` means ``V`` is ``U alpha`` alone (no direction
    survived the rank threshold); ``alpha`` must then be passed.
    Returns ``(predictions, boundary_flags)``.
    """
    Z_new = _as2d(Z_new)
    U_new = _as2d(U_new, Z_new.shape[0])
    if instrument is None:
        if alpha is None:
            raise ValueError("alpha is required when there is no instrument")
        V_new = (U_new @ np.asarray(alpha, float))[:, None]
    else:
        V_new = instrument.assemble(U_new, instrument.zstar(Z_new, U_new), alpha)
    sm = fit.smoother
    before = sm.boundary_flags
    g = np.atleast_1d(estimate_g(fit, sm, V_new))
    flags = sm.boundary_flags - before
    if flags:
        log.warning("%d prediction points fell outside the kernel support", flags)
    return Z_new @ fit.theta + g, flags


def predict_sub_new(fit: SemiparametricFit, Z_new) -> np.ndarray:
    """``theta'Z_new + gbar``; needs no unselected predictors."""
    return _as2d(Z_new) @ fit.theta + fit.g_bar


def predict_sub_classic(refit_theta, Z_new) -> np.ndarray:
    return _as2d(Z_new) @ np.asarray(refit_theta, dtype=float)


def predict_bundle(out, X_new) -> PredictionBundle:
    """All three predictors for raw new rows, given a :class:`pipeline.FitOutput`."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != out.scale.size:
        raise ValueError(f"new data has {X_new.shape[1]} columns, fit used {out.scale.size}")
    Xs = X_new / out.scale
    Z = Xs[:, out.selected]
    U = Xs[:, out.complement]
    y_full, flags = predict_full(out.fit_new, out.instrument, Z, U, out.alpha_plug)
    return PredictionBundle(
        y_full=y_full,
        y_sub_new=predict_sub_new(out.fit_new, Z),
        y_sub_classic=predict_sub_classic(out.selection.refit_theta, Z),
        g_bar=out.fit_new.g_bar,
        boundary_flags=flags,
    )


def coefficient_error(estimate, selected, truth: CoefficientTruth, convention: str = "mean") -> float:
    """Squared error of ``estimate`` against the true coefficients at ``selected``.

    ``convention='sum'`` gives the squared l2 norm; ``'mean'`` divides it by
    the number of selected coordinates.
    """
    if convention not in MSE_CONVENTIONS:
        raise ValueError(f"convention must be one of {MSE_CONVENTIONS}")
    diff = np.asarray(estimate, float) - truth.beta[np.asarray(selected, dtype=int)]
    sq = float(diff @ diff)
    return sq / diff.size if convention == "mean" else sq


@dataclass
class ReplicateOutcome:
    """What one replicate contributes to a cell summary."""

    selected: np.ndarray
    theta_new: np.ndarray  # original predictor scale
    theta_classic: np.ndarray
    predictions: PredictionBundle
    y_test: np.ndarray
    theta_dantzig_alpha: np.ndarray | None = None
    attempts: int = 1
    fallback: bool = False
    theta_se_new: np.ndarray | None = None


@dataclass
class EvaluationReport:
    mse_new: float
    mse_classic: float
    std_mse_new: float
    std_mse_classic: float
    pe_full: float
    pe_sub_new: float
    pe_sub_classic: float
    std_pe_full: float
    std_pe_sub_new: float
    std_pe_sub_classic: float
    tau: float
    n_replicates: int
    wins: int
    mse_dantzig_alpha: float = float("nan")
    mean_selected: float = float("nan")
    retries: int = 0
    fallbacks: int = 0
    mse_convention: str = "mean"
    label: str = ""
    per_replicate: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_replicate")
        return d


def _pe(pred, y):
    r = np.asarray(pred, float) - y
    return float(r @ r / r.size)


def evaluate_cell(truth: CoefficientTruth, outcomes, *, convention: str = "mean", label: str = "") -> EvaluationReport:
    """Aggregate replicate outcomes into MSE, PE and the win fraction ``tau``.

    ``tau`` counts replicates where ``y_sub_new`` has strictly smaller test
    error than ``y_sub_classic``; ties are losses.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no replicates to evaluate")
    R = len(outcomes)
    mse_n = np.empty(R)
    mse_c = np.empty(R)
    mse_d = np.full(R, np.nan)
    pe = np.empty((R, 3))
    qs = np.empty(R)
    for r, o in enumerate(outcomes):
        y = np.asarray(o.y_test, float)
        if y.size == 0:
            raise ValueError(f"replicate {r} has an empty test set")
        mse_n[r] = coefficient_error(o.theta_new, o.selected, truth, convention)
        mse_c[r] = coefficient_error(o.theta_classic, o.selected, truth, convention)
        if o.theta_dantzig_alpha is not None:
            mse_d[r] = coefficient_error(o.theta_dantzig_alpha, o.selected, truth, convention)
        b = o.predictions
        pe[r] = (_pe(b.y_full, y), _pe(b.y_sub_new, y), _pe(b.y_sub_classic, y))
        qs[r] = len(o.selected)
    wins = int(np.sum(pe[:, 1] < pe[:, 2]))
    if R == 1:
        warnings.warn("a single replicate: standard deviations reported as 0", RuntimeWarning, stacklevel=2)
        sd = lambda a: np.zeros(a.shape[1:]) if a.ndim > 1 else 0.0  # noqa: E731
    else:
        sd = lambda a: a.std(axis=0, ddof=1)  # noqa: E731
    pe_sd = sd(pe)
    return EvaluationReport(
        mse_new=float(mse_n.mean()),
        mse_classic=float(mse_c.mean()),
        std_mse_new=float(sd(mse_n)),
        std_mse_classic=float(sd(mse_c)),
        pe_full=float(pe[:, 0].mean()),
        pe_sub_new=float(pe[:, 1].mean()),
        pe_sub_classic=float(pe[:, 2].mean()),
        std_pe_full=float(pe_sd[0]),
        std_pe_sub_new=float(pe_sd[1]),
        std_pe_sub_classic=float(pe_sd[2]),
        tau=wins / R,
        n_replicates=R,
        wins=wins,
        mse_dantzig_alpha=float(np.mean(mse_d)) if not np.isnan(mse_d).all() else float("nan"),
        mean_selected=float(qs.mean()),
        retries=int(sum(o.attempts - 1 for o in outcomes)),
        fallbacks=int(sum(o.fallback for o in outcomes)),
        mse_convention=convention,
        label=label,
        per_replicate={"mse_new": mse_n, "mse_classic": mse_c, "pe": pe},
    )


_CSV_FIELDS = [
    "label", "n_replicates", "mse_new", "std_mse_new", "mse_classic", "std_mse_classic",
    "mse_dantzig_alpha", "pe_full", "std_pe_full", "pe_sub_new", "std_pe_sub_new",
    "pe_sub_classic", "std_pe_sub_classic", "wins", "tau", "mean_selected", "retries", "fallbacks",
    "mse_convention",
]


def report_to_csv(reports) -> str:
    """One CSV row per report; floats written with ``repr`` so they round-trip."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        s = rep.summary()
        w.writerow({k: repr(s[k]) if isinstance(s[k], float) else s[k] for k in _CSV_FIELDS})
    return buf.getvalue()


def reports_from_csv(text: str) -> list[EvaluationReport]:
    """Inverse of :func:`report_to_csv`."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        missing = set(_CSV_FIELDS) - set(row)
        if missing:
            raise ValueError(f"report CSV lacks columns {sorted(missing)}")
        kw = {}
        for k in _CSV_FIELDS:
            v = row[k]
            if k in ("label", "mse_convention"):
                kw[k] = v
            elif k in ("n_replicates", "wins", "retries", "fallbacks"):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        out.append(EvaluationReport(**kw))
    return out


def report_table(reports) -> str:
    """Aligned text table: MSE(std) for both estimators, PE(std) for the three predictors, tau."""
    header = ["cell", "MSE new", "MSE classic", "PE full", "PE sub new", "PE sub classic", "tau"]
    rows = [header]
    for rep in reports:
        rows.append([
            rep.label or "-",
            f"{rep.mse_new:.4g}({rep.std_mse_new:.4g})",
            f"{rep.mse_classic:.4g}({rep.std_mse_classic:.4g})",
            f"{rep.pe_full:.4f}({rep.std_pe_full:.4f})",
            f"{rep.pe_sub_new:.4f}({rep.std_pe_sub_new:.4f})",
            f"{rep.pe_sub_classic:.4f}({rep.std_pe_sub_classic:.4f})",
            f"{rep.wins}/{rep.n_replicates}",
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"

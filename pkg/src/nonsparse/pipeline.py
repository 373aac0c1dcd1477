"""End-to-end fit: selection, instrument construction and both estimators.

Steps, on the standardized design:

1. optional screening, Dantzig selection, threshold and least-squares refit;
2. ``Z*`` and the instrument matrix ``A`` (exact SVD construction, or the
   single-row approximation once the retained rank exceeds ``rank_cap``);
3. partial-residual estimators for the user ``alpha`` (zero by default) and
   for ``alpha`` equal to the Dantzig coefficients of the unselected columns.

A zero ``alpha`` makes the first coordinate of ``V`` constant, so the
adjustment is carried entirely by ``W``.  That is a legitimate choice: the
unbiasedness of the adjusted model does not depend on ``alpha``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dantzig, instrument, semiparam
from .instrument import DEFAULT_RANK_THRESHOLD, InstrumentSpec
from .model_core import Dataset, DataError, partition, standardize
from .screening import sis_screen

__all__ = ["FitOptions", "FitOutput", "StageError", "fit"]

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``hint`` suggests a remedy."""

    def __init__(self, stage: str, message: str, hint: str = ""):
        text = f"[{stage}] {message}"
        if hint:
            text += f" (hint: {hint})"
        super().__init__(text)
        self.stage = stage
        self.hint = hint


@dataclass(frozen=True)
class FitOptions:
    # Dantzig tuning constant on the unit-norm column scale (columns of
    # norm 1); None draws it from noise realizations.
    lambda_p: float | None = None
    sigma: float | None = None  # None: estimated
    kappa: float = dantzig.DEFAULT_KAPPA
    realizations: int = dantzig.DEFAULT_REALIZATIONS
    lambda_seed: int = 0
    center_selection: bool = True
    empty_selection: str = "error"  # error | strongest
    sis_keep: int | None = None
    d_pseudo: int = 1
    instrument: str = "auto"  # auto | exact | approx
    rank_threshold: float = DEFAULT_RANK_THRESHOLD
    rank_cap: int = 3
    approx_c: float = 2.0
    approx_ck: float = 0.2
    whiten_approx: bool = False
    alpha_policy: str = "zero"  # zero | dantzig | given
    # for "given": one weight per original column on the raw predictor scale;
    # entries at selected columns are ignored
    alpha: np.ndarray | None = None
    bandwidth: float | None = None
    bandwidth_scale: float = 1.0
    kernel_order: int = 2
    leave_one_out: bool = False
    scale_v: bool = True  # smooth V on unit-spread coordinates


@dataclass
class FitOutput:
    selection: dantzig.SelectionResult  # indices refer to the original columns
    instrument: InstrumentSpec | None  # None when no direction survives
    fit_new: semiparam.SemiparametricFit
    fit_dantzig_alpha: semiparam.SemiparametricFit
    alpha_plug: np.ndarray
    alpha_dantzig: np.ndarray
    scale: np.ndarray
    complement: np.ndarray
    names: tuple[str, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def selected(self) -> np.ndarray:
        return self.selection.selected

    @property
    def theta(self) -> np.ndarray:
        """Bias-corrected coefficients on the original predictor scale."""
        return self.fit_new.theta / self.scale[self.selected]

    @property
    def theta_dantzig_alpha(self) -> np.ndarray:
        return self.fit_dantzig_alpha.theta / self.scale[self.selected]

    @property
    def theta_refit(self) -> np.ndarray:
        return self.selection.refit_theta / self.scale[self.selected]

    @property
    def theta_se(self) -> np.ndarray:
        return self.fit_new.std_errors / self.scale[self.selected]


def _centered_view(ds: Dataset):
    """Centered, unit-variance copy of ``ds`` with a centered response.

    Also returns the factors mapping coefficients on this view to the
    uncentered standardized scale.
    """
    X = ds.design
    Xc = X - X.mean(axis=0)
    sd = np.sqrt(np.mean(Xc * Xc, axis=0))
    bad = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0)))
    if bad.size:
        raise DataError(f"column {ds.names[bad[0]]!r} is constant")
    y = ds.response
    return Dataset(Xc / sd, y - y.mean(), ds.names), 1.0 / sd


def _build_instrument(Z, U, opts: FitOptions, diag: dict):
    if U.shape[1] < opts.d_pseudo:
        raise StageError(
            "instrument", f"only {U.shape[1]} unselected columns for d_pseudo={opts.d_pseudo}",
            "lower d_pseudo or tau",
        )
    zstar = np.hstack([Z, U[:, : opts.d_pseudo]])
    mode = opts.instrument
    spec = None
    if mode in ("auto", "exact"):
        try:
            spec = instrument.exact_instrument(zstar, U, opts.rank_threshold, opts.d_pseudo)
        except instrument.InstrumentError as exc:
            diag["instrument_note"] = str(exc)
            log.info("exact instrument unavailable: %s", exc)
            return None, zstar
        diag["exact_rank"] = spec.effective_rank
        if mode == "exact" or spec.effective_rank <= opts.rank_cap:
            return spec, zstar
    sigma_uz = instrument.cross_covariance(U, zstar)
    spec = instrument.approximate_row_instrument(
        zstar, sigma_uz, opts.approx_c, opts.approx_ck, opts.d_pseudo, opts.whiten_approx
    )
    return spec, zstar


def _fit_one(y, Z, V, opts: FitOptions, mode: str, diag: dict, tag: str):
    scale = semiparam.coordinate_spread(V) if opts.scale_v else None
    Vs = V if scale is None else V / scale
    if opts.bandwidth is not None:
        h = opts.bandwidth
    else:
        try:
            h = semiparam.default_bandwidth(Vs, opts.kernel_order, opts.bandwidth_scale)
        except ValueError:
            # V constant: weights are flat and any bandwidth gives global means
            h = 1.0
    diag[f"bandwidth_{tag}"] = h
    try:
        f = semiparam.fit_partially_linear(
            y, Z, V, h, kernel_order=opts.kernel_order,
            leave_one_out=opts.leave_one_out, mode=mode, coordinate_scale=scale,
        )
    except semiparam.IdentifiabilityError as exc:
        raise StageError("estimation", str(exc), "raise d_pseudo or change alpha") from exc
    diag[f"boundary_flags_{tag}"] = f.smoother.boundary_flags
    diag[f"identifiability_{tag}"] = float(np.linalg.eigvalsh(f.S_n)[0])
    return f


def fit(d: Dataset, options: FitOptions | None = None) -> FitOutput:
    """Run the full procedure on raw data ``d``."""
    opts = options or FitOptions()
    diag: dict = {}
    try:
        ds, scale = standardize(d)
    except DataError as exc:
        raise StageError("standardize", str(exc), "drop constant-zero columns") from exc
    X, y = ds.design, ds.response
    n, p = X.shape

    # Selection runs on the centered view (an unpenalized intercept); every
    # later stage uses the uncentered standardized design.
    if opts.center_selection:
        try:
            sel_ds, to_rms = _centered_view(ds)
        except DataError as exc:
            raise StageError("selection", str(exc), "drop constant columns") from exc
    else:
        sel_ds, to_rms = ds, np.ones(p)

    kept = np.arange(p)
    if opts.sis_keep is not None:
        try:
            kept = sis_screen(sel_ds, opts.sis_keep).kept
        except ValueError as exc:
            raise StageError("screening", str(exc), "choose d_keep between 1 and p") from exc
    work = sel_ds.columns(kept)
    diag["screened_dim"] = int(kept.size)

    # standardized columns have norm sqrt(n)
    lam_internal = None if opts.lambda_p is None else opts.lambda_p * np.sqrt(n)
    try:
        sel = dantzig.select(
            work, sigma=opts.sigma, lambda_p=lam_internal, kappa=opts.kappa,
            realizations=opts.realizations, seed=opts.lambda_seed, empty=opts.empty_selection,
        )
        selected = kept[sel.selected]
        refit = dantzig.gaussian_refit(ds, selected)
    except dantzig.SelectionError as exc:
        hint = "lower tau (kappa)" if "threshold" in str(exc) else "raise d_keep or lambda"
        raise StageError("selection", str(exc), hint) from exc
    diag["lambda_p"] = sel.lambda_p / np.sqrt(n)
    diag["sigma"] = sel.sigma_used
    beta_full = np.zeros(p)
    beta_full[kept] = sel.beta_dantzig * to_rms[kept]
    selection = dantzig.SelectionResult(
        beta_dantzig=beta_full, lam=sel.lam, lambda_p=sel.lambda_p,
        tau_threshold=sel.tau_threshold, selected=selected,
        refit_theta=refit, sigma_used=sel.sigma_used, fallback=sel.fallback,
    )
    diag["selection_fallback"] = sel.fallback
    if selected.size >= n - 1:
        raise StageError("selection", f"{selected.size} columns selected with n={n}", "raise tau (kappa)")
    if selected.size == p:
        raise StageError("instrument", "every column was selected; no U left", "raise tau (kappa)")

    part = partition(X, selected)
    Z, U = part.Z, part.U
    spec, zstar = _build_instrument(Z, U, opts, diag)
    diag["instrument_mode"] = spec.mode if spec else "none"
    diag["effective_rank"] = spec.effective_rank if spec else 0

    alpha_dz = beta_full[part.complement]
    if opts.alpha_policy == "zero":
        alpha_plug = np.zeros(U.shape[1])
    elif opts.alpha_policy == "dantzig":
        alpha_plug = alpha_dz.copy()
    elif opts.alpha_policy == "given":
        if opts.alpha is None:
            raise StageError("instrument", "alpha_policy='given' without alpha values")
        given = np.asarray(opts.alpha, dtype=float).ravel()
        if given.shape != (p,):
            raise StageError(
                "instrument", f"alpha has length {given.size}, need {p}",
                "give one weight per predictor column",
            )
        alpha_plug = (given * scale)[part.complement]
    else:
        raise StageError("instrument", f"unknown alpha_policy {opts.alpha_policy!r}")

    if spec is None:
        V_new = (U @ alpha_plug)[:, None]
        V_dz = (U @ alpha_dz)[:, None]
    else:
        spec = spec.with_alpha(alpha_plug, U, zstar)
        V_new = spec.V_values
        V_dz = spec.assemble(U, zstar, alpha_dz)

    fit_new = _fit_one(y, Z, V_new, opts, "plug_alpha", diag, "new")
    fit_dz = _fit_one(y, Z, V_dz, opts, "dantzig_alpha", diag, "dantzig")
    diag["identifiability"] = diag["identifiability_new"]
    return FitOutput(
        selection=selection, instrument=spec, fit_new=fit_new, fit_dantzig_alpha=fit_dz,
        alpha_plug=alpha_plug, alpha_dantzig=alpha_dz, scale=scale,
        complement=part.complement, names=d.names, diagnostics=diag,
    )

"""Versioned JSON fit artifacts.

Kernel prediction needs the training ``V`` values and residual field, so the
artifact keeps them alongside the coefficients.  Floats are written with
their shortest round-tripping representation, so a reloaded model predicts
bit-for-bit like the original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .instrument import InstrumentSpec
from .predict import PredictionBundle, predict_full, predict_sub_classic, predict_sub_new
from .semiparam import KernelSmoother, SemiparametricFit

__all__ = ["ARTIFACT_SCHEMA", "ArtifactError", "FittedModel", "save_model", "load_model"]

ARTIFACT_SCHEMA = "nonsparse-fit/1"


class ArtifactError(ValueError):
    pass


@dataclass
class FittedModel:
    """Everything needed to predict from a finished fit."""

    names: tuple[str, ...]
    response_name: str
    scale: np.ndarray
    selected: np.ndarray
    complement: np.ndarray
    fit_new: SemiparametricFit
    instrument: InstrumentSpec | None
    alpha_plug: np.ndarray
    refit_theta: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_fit(cls, out, response_name: str = "y") -> "FittedModel":
        return cls(
            names=tuple(out.names),
            response_name=response_name,
            scale=np.asarray(out.scale, float),
            selected=np.asarray(out.selected, int),
            complement=np.asarray(out.complement, int),
            fit_new=out.fit_new,
            instrument=out.instrument,
            alpha_plug=np.asarray(out.alpha_plug, float),
            refit_theta=np.asarray(out.selection.refit_theta, float),
            diagnostics=_plain(out.diagnostics),
        )

    def predict(self, X_new) -> PredictionBundle:
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        if X_new.shape[1] != self.scale.size:
            raise ValueError(f"new data has {X_new.shape[1]} columns, model expects {self.scale.size}")
        Xs = X_new / self.scale
        Z, U = Xs[:, self.selected], Xs[:, self.complement]
        y_full, flags = predict_full(self.fit_new, self.instrument, Z, U, self.alpha_plug)
        return PredictionBundle(
            y_full=y_full,
            y_sub_new=predict_sub_new(self.fit_new, Z),
            y_sub_classic=predict_sub_classic(self.refit_theta, Z),
            g_bar=self.fit_new.g_bar,
            boundary_flags=flags,
        )


def _plain(obj):
    """Convert numpy scalars/arrays inside ``obj`` to JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _arr(x, dtype=float):
    return np.asarray(x, dtype=dtype)


def _to_dict(m: FittedModel) -> dict:
    f = m.fit_new
    sm = f.smoother
    inst = None
    if m.instrument is not None:
        s = m.instrument
        inst = {
            "A": s.A, "mode": s.mode, "d_pseudo": s.d_pseudo, "effective_rank": s.effective_rank,
            "rank_threshold": s.rank_threshold, "center": s.center, "whitener": s.whitener,
            "singular_values": s.singular_values,
        }
    return _plain({
        "schema": ARTIFACT_SCHEMA,
        "names": list(m.names),
        "response": m.response_name,
        "scale": m.scale,
        "selected": m.selected,
        "complement": m.complement,
        "alpha": m.alpha_plug,
        "refit_theta": m.refit_theta,
        "theta": f.theta,
        "S_n": f.S_n,
        "residuals": f.residuals,
        "sigma_V_sq": f.sigma_V_sq,
        "mode": f.mode,
        "g_field": f.g_field,
        "g_values": f.g_values,
        "smoother": {
            "points": sm.points, "bandwidth": sm.bandwidth, "kernel_order": sm.kernel_order,
            "leave_one_out": sm.leave_one_out, "coordinate_scale": sm.coordinate_scale,
        },
        "instrument": inst,
        "diagnostics": m.diagnostics,
    })


def save_model(m: FittedModel, path) -> None:
    text = json.dumps(_to_dict(m), indent=1, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> FittedModel:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: not a fit artifact ({exc})") from exc
    if not isinstance(raw, dict) or raw.get("schema") != ARTIFACT_SCHEMA:
        raise ArtifactError(f"{path}: unsupported artifact schema {raw.get('schema') if isinstance(raw, dict) else None!r}")
    try:
        s = raw["smoother"]
        sm = KernelSmoother(
            _arr(s["points"]), float(s["bandwidth"]), int(s["kernel_order"]), bool(s["leave_one_out"]),
            None if s["coordinate_scale"] is None else _arr(s["coordinate_scale"]),
        )
        fit = SemiparametricFit(
            theta=_arr(raw["theta"]), S_n=_arr(raw["S_n"]), residuals=_arr(raw["residuals"]),
            sigma_V_sq=float(raw["sigma_V_sq"]), mode=raw["mode"], g_field=_arr(raw["g_field"]),
            g_values=_arr(raw["g_values"]), smoother=sm,
        )
        inst = None
        if raw["instrument"] is not None:
            i = raw["instrument"]
            inst = InstrumentSpec(
                A=_arr(i["A"]), mode=i["mode"], d_pseudo=int(i["d_pseudo"]),
                effective_rank=int(i["effective_rank"]), rank_threshold=float(i["rank_threshold"]),
                center=_arr(i["center"]), whitener=_arr(i["whitener"]),
                singular_values=_arr(i["singular_values"]), alpha=_arr(raw["alpha"]),
            )
        return FittedModel(
            names=tuple(raw["names"]), response_name=raw["response"], scale=_arr(raw["scale"]),
            selected=_arr(raw["selected"], int), complement=_arr(raw["complement"], int),
            fit_new=fit, instrument=inst, alpha_plug=_arr(raw["alpha"]),
            refit_theta=_arr(raw["refit_theta"]), diagnostics=raw.get("diagnostics", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed artifact ({exc})") from exc

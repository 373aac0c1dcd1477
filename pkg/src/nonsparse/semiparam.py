"""Product-kernel Nadaraya-Watson smoothing and partial-residual estimators.

For the partially linear model ``Y = theta'Z + g(V) + xi`` the response and
each column of ``Z`` are smoothed against ``V`` and the smooths subtracted;
``theta`` is then the least-squares coefficient of the response residuals on
the predictor residuals.  Smoothing is leave-self-in unless requested
otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "IdentifiabilityError",
    "KernelSmoother",
    "SemiparametricFit",
    "product_kernel_weights",
    "default_bandwidth",
    "coordinate_spread",
    "partial_residuals",
    "fit_theta",
    "fit_theta_weighted",
    "fit_partially_linear",
    "estimate_g",
]

log = logging.getLogger(__name__)

_LOG_TINY = math.log(1e-300)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class IdentifiabilityError(np.linalg.LinAlgError):
    """Residualized predictors are (numerically) collinear."""


@dataclass
class KernelSmoother:
    """Nadaraya-Watson smoother with a Gaussian product kernel.

    ``kernel_order`` 2 is the standard normal density; 4 uses the
    fourth-order Gaussian kernel ``(3 - u^2) phi(u) / 2``.  Optional
    ``coordinate_scale`` divides each coordinate before the common bandwidth
    is applied, i.e. coordinate ``j`` is smoothed with ``h * scale_j``.
    """

    points: np.ndarray
    bandwidth: float
    kernel_order: int = 2
    leave_one_out: bool = False
    coordinate_scale: np.ndarray | None = None
    boundary_flags: int = field(default=0, init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        if not self.bandwidth > 0 or not math.isfinite(self.bandwidth):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth}")
        if self.kernel_order not in (2, 4):
            raise ValueError("kernel_order must be 2 or 4")
        if self.coordinate_scale is not None:
            sc = np.asarray(self.coordinate_scale, dtype=float).ravel()
            if sc.shape != (pts.shape[1],) or not np.all(sc > 0):
                raise ValueError("coordinate_scale needs one positive entry per coordinate")
            self.coordinate_scale = sc

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def weight_matrix(self, queries=None) -> np.ndarray:
        """Rows of normalized weights, one per query (training points by default)."""
        train = queries is None
        Q = self.points if train else np.atleast_2d(np.asarray(queries, dtype=float))
        if Q.shape[1] != self.points.shape[1]:
            raise ValueError(
                f"query has {Q.shape[1]} coordinates, smoother has {self.points.shape[1]}"
            )
        h = self.bandwidth
        dim = self.points.shape[1]
        U = (Q[:, None, :] - self.points[None, :, :]) / h
        if self.coordinate_scale is not None:
            U = U / self.coordinate_scale
        logk = -0.5 * np.einsum("mnd,mnd->mn", U, U) - dim * (_LOG_SQRT_2PI + math.log(h))
        if self.kernel_order == 4:
            poly = np.prod(0.5 * (3.0 - U * U), axis=2)
        else:
            poly = None
        if train and self.leave_one_out:
            np.fill_diagonal(logk, -np.inf)
        top = logk.max(axis=1, keepdims=True)
        safe_top = np.where(np.isfinite(top), top, 0.0)
        E = np.exp(logk - safe_top)
        if poly is not None:
            E = E * poly
        s = E.sum(axis=1)
        with np.errstate(divide="ignore"):
            log_denominator = np.log(np.where(s > 0, s, np.nan)) + top[:, 0]
        bad = ~(log_denominator >= _LOG_TINY)
        W = np.empty_like(E)
        good = ~bad
        W[good] = E[good] / s[good, None]
        if bad.any():
            self.boundary_flags += int(bad.sum())
            log.debug("kernel denominator underflow at %d queries; nearest-neighbour fallback", bad.sum())
            d2 = np.einsum("mnd,mnd->mn", U[bad], U[bad])
            if train and self.leave_one_out:
                rows = np.flatnonzero(bad)
                d2[np.arange(rows.size), rows] = np.inf
            W[bad] = 0.0
            W[np.flatnonzero(bad), np.argmin(d2, axis=1)] = 1.0
        return W

    def smooth(self, values, queries=None) -> np.ndarray:
        """Kernel-weighted averages of ``values`` (length n, or n x k)."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n:
            raise ValueError(f"values have {values.shape[0]} rows, smoother has {self.n}")
        return self.weight_matrix(queries) @ values


def product_kernel_weights(sm: KernelSmoother, v) -> np.ndarray:
    """Normalized kernel weights of the training points at a single query ``v``."""
    return sm.weight_matrix(np.asarray(v, dtype=float).reshape(1, -1))[0]


def default_bandwidth(V, kernel_order: int = 2, scale: float = 1.0) -> float:
    """Rate-optimal bandwidth ``scale * sbar * n^(-1/(2k + dim V))``.

    ``sbar`` is the geometric mean of the coordinate standard deviations of
    ``V``.  Coordinates that are constant in the sample carry no information
    for the kernel (they multiply every weight by the same factor) and are
    left out of ``sbar``.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    n, dim = V.shape
    if n < 2:
        raise ValueError("need at least two points for a bandwidth")
    sd = V.std(axis=0, ddof=1)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(V).max(axis=0))
    if not live.any():
        raise ValueError("every coordinate of V is constant; V is degenerate")
    sbar = float(np.exp(np.mean(np.log(sd[live]))))
    return scale * sbar * n ** (-1.0 / (2 * kernel_order + dim))


def coordinate_spread(V) -> np.ndarray:
    """Per-coordinate sample standard deviations, with 1 for constant coordinates."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    sd = V.std(axis=0, ddof=1)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(V).max(axis=0))
    return np.where(live, sd, 1.0)


def partial_residuals(y, Z, V, h: float, *, kernel_order: int = 2, leave_one_out: bool = False):
    """Return ``(y - E[y|V], Z - E[Z|V])`` with kernel estimates of the conditional means."""
    sm = KernelSmoother(V, h, kernel_order, leave_one_out)
    Wm = sm.weight_matrix()
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    return y - Wm @ y, Z - Wm @ Z


@dataclass
class SemiparametricFit:
    theta: np.ndarray
    S_n: np.ndarray
    residuals: np.ndarray
    sigma_V_sq: float
    mode: str = "plug_alpha"
    # Y_k - theta'Z_k, the field smoothed to estimate g
    g_field: np.ndarray | None = None
    g_values: np.ndarray | None = None
    smoother: KernelSmoother | None = None

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        """Asymptotic covariance ``sigma_V^2 S_n^{-1} / n``."""
        return self.sigma_V_sq * np.linalg.inv(self.S_n) / self.n

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def g_bar(self) -> float:
        if self.g_values is None:
            raise ValueError("fit carries no g estimates")
        return float(np.mean(self.g_values))


def _solve_spd(S, b):
    S = 0.5 * (S + S.T)
    lam_min = np.linalg.eigvalsh(S)[0] if S.size else 0.0
    if not lam_min > 1e-10:
        raise IdentifiabilityError(
            f"residualized predictor matrix is singular (smallest eigenvalue {lam_min:.3g}); "
            "the adjusted model is not identifiable for this choice of V"
        )
    return S, np.linalg.solve(S, b)


def fit_theta(y_hat, Z_hat, mode: str = "plug_alpha") -> SemiparametricFit:
    """Least squares of the response residuals on the predictor residuals."""
    y_hat = np.asarray(y_hat, dtype=float)
    Z_hat = np.asarray(Z_hat, dtype=float)
    n = y_hat.shape[0]
    S, theta = _solve_spd(Z_hat.T @ Z_hat / n, Z_hat.T @ y_hat / n)
    resid = y_hat - Z_hat @ theta
    return SemiparametricFit(theta, S, resid, float(resid @ resid / n), mode)


def fit_theta_weighted(y_hat, Z_hat, variances) -> SemiparametricFit:
    """Weighted version for known heteroscedastic variances ``sigma_i^2``."""
    y_hat = np.asarray(y_hat, dtype=float)
    Z_hat = np.asarray(Z_hat, dtype=float)
    var = np.asarray(variances, dtype=float)
    if var.shape != y_hat.shape:
        raise ValueError("one variance per observation is required")
    if not np.all(var > 0):
        raise ValueError("variances must be strictly positive")
    n = y_hat.shape[0]
    w = 1.0 / var
    Zw = Z_hat * w[:, None]
    S, theta = _solve_spd(Zw.T @ Z_hat / n, Zw.T @ y_hat / n)
    resid = y_hat - Z_hat @ theta
    return SemiparametricFit(theta, S, resid, float(resid @ resid / n), "heteroscedastic")


def fit_partially_linear(
    y,
    Z,
    V,
    h: float,
    *,
    kernel_order: int = 2,
    leave_one_out: bool = False,
    mode: str = "plug_alpha",
    variances=None,
    coordinate_scale=None,
) -> SemiparametricFit:
    """Partial residuals, ``theta`` and the fitted ``g`` at the training points."""
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    sm = KernelSmoother(V, h, kernel_order, leave_one_out, coordinate_scale)
    Wm = sm.weight_matrix()
    y_hat = y - Wm @ y
    Z_hat = Z - Wm @ Z
    if variances is None:
        fit = fit_theta(y_hat, Z_hat, mode)
    else:
        fit = fit_theta_weighted(y_hat, Z_hat, variances)
    fit.g_field = y - Z @ fit.theta
    fit.g_values = Wm @ fit.g_field
    fit.smoother = sm
    return fit


def estimate_g(fit: SemiparametricFit, sm: KernelSmoother | None, v) -> np.ndarray | float:
    """Kernel estimate of ``g`` at one point or at each row of ``v``."""
    sm = sm if sm is not None else fit.smoother
    if fit.g_field is None or sm is None:
        raise ValueError("fit has no residual field; use fit_partially_linear")
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1 and sm.points.shape[1] > 1 or v.ndim == 0
    q = v.reshape(1, -1) if single else (v[:, None] if v.ndim == 1 else v)
    out = sm.smooth(fit.g_field, q)
    return float(out[0]) if single else out

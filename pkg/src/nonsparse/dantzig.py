"""Dantzig selector, threshold selection and the Gaussian-Dantzig refit.

The selector solves

    min ||beta||_1   subject to   max_j |x_j'(Y - X beta)| <= lambda_sigma

as a linear program in ``(beta+, beta-) >= 0``.  Everything here expects a
design that has already been passed through :func:`model_core.standardize`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lp_solver import LinearProgram, solve
from .model_core import Dataset

__all__ = [
    "SelectionError",
    "SelectionResult",
    "dantzig_select",
    "estimate_lambda",
    "threshold_select",
    "gaussian_refit",
    "estimate_sigma",
    "select",
    "DEFAULT_KAPPA",
    "DEFAULT_REALIZATIONS",
]

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 0.25
DEFAULT_REALIZATIONS = 100
FEASIBILITY_SLACK = 1e-6

# Asymptotic constants of the selection-consistency argument (restricted
# eigenvalue bound sqrt(3/8), b > sqrt(2), 0 < c1 < 1, ...).  They are not
# identifiable from a sample and are kept for reference only.
RESTRICTED_EIGENVALUE_BOUND = float(np.sqrt(3.0 / 8.0))
MIN_B = float(np.sqrt(2.0))


class SelectionError(RuntimeError):
    """Selection stage failure (LP breakdown, empty support, collinearity)."""


@dataclass(frozen=True)
class SelectionResult:
    beta_dantzig: np.ndarray
    lam: float  # lambda_p * sigma, the bound actually imposed
    lambda_p: float
    tau_threshold: float
    selected: np.ndarray
    refit_theta: np.ndarray
    sigma_used: float
    fallback: bool = False  # support replaced by the strongest marginal column

    @property
    def q(self) -> int:
        return int(self.selected.size)


def dantzig_select(d: Dataset, lambda_sigma: float, tol: float = 1e-9) -> np.ndarray:
    """Dantzig selector estimate for the bound ``lambda_sigma``."""
    if not lambda_sigma >= 0:
        raise ValueError("lambda_sigma must be non-negative")
    X, Y = d.design, d.response
    p = X.shape[1]
    b = X.T @ Y
    if lambda_sigma >= np.abs(b).max():
        return np.zeros(p)
    M = X.T @ X
    G = np.block([[-M, M], [M, -M]])
    h = np.concatenate([lambda_sigma - b, lambda_sigma + b])
    sol = solve(LinearProgram(np.ones(2 * p), G, h), tol=tol)
    if sol.status != "optimal":
        raise SelectionError(
            f"Dantzig LP returned status {sol.status!r} "
            f"(lambda_sigma={lambda_sigma:.6g}, n={X.shape[0]}, p={p}, "
            f"iterations={sol.iterations})"
        )
    beta = sol.point[:p] - sol.point[p:]
    viol = np.abs(X.T @ (Y - X @ beta)).max() - lambda_sigma
    if viol > FEASIBILITY_SLACK * max(1.0, lambda_sigma):
        raise SelectionError(
            f"Dantzig solution violates the correlation bound by {viol:.3g} "
            f"(lambda_sigma={lambda_sigma:.6g}); numerical failure in the LP"
        )
    return beta


def estimate_lambda(d: Dataset, realizations: int = DEFAULT_REALIZATIONS, seed: int = 0) -> float:
    """Empirical maximum of ``|X'z|`` over draws ``z ~ N(0, I_n)``."""
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((realizations, d.n))
    return float(np.abs(z @ d.design).max())


def threshold_select(beta_dantzig, tau: float) -> np.ndarray:
    """Indices (0-based, ascending) with ``|beta_j| >= tau`` and ``beta_j != 0``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    beta = np.asarray(beta_dantzig, dtype=float)
    a = np.abs(beta)
    sel = np.flatnonzero((a >= tau) & (a > 0))
    if sel.size == 0:
        raise SelectionError(
            f"no coefficient reaches the threshold tau={tau:.4g} "
            f"(largest |beta| is {a.max():.4g}); lower tau (kappa) or lambda"
        )
    return sel


def gaussian_refit(d: Dataset, selected) -> np.ndarray:
    """Least squares on the selected columns (no intercept)."""
    sel = np.asarray(selected, dtype=int)
    if sel.size > d.n:
        raise SelectionError(f"{sel.size} selected columns exceed n={d.n}")
    Z = d.design[:, sel]
    U_, s, Vt = np.linalg.svd(Z, full_matrices=False)
    if s[-1] < 1e-10 * s[0]:
        involved = np.flatnonzero(np.abs(Vt[-1]) > 1e-3)
        names = [d.names[sel[j]] for j in involved]
        raise SelectionError(f"selected columns are collinear: {', '.join(names)}")
    return Vt.T @ ((U_.T @ d.response) / s)


def estimate_sigma(d: Dataset, lambda_p: float) -> float:
    """Plug-in noise level for data with unknown sigma.

    A single pass: a Dantzig fit with ``sd(Y)`` as the noise scale, then the
    residual standard error of the least-squares refit on its full support
    (capped at the ``(n - 1) // 2`` largest coefficients so the residual
    degrees of freedom stay positive).
    """
    y = d.response
    sigma0 = float(np.std(y))
    if sigma0 == 0.0:
        raise SelectionError("response is constant; cannot estimate sigma")
    beta = dantzig_select(d, lambda_p * sigma0)
    support = np.flatnonzero(beta)
    max_q = max(0, (d.n - 1) // 2)
    if support.size > max_q:
        support = np.sort(support[np.argsort(-np.abs(beta[support]), kind="stable")[:max_q]])
    if support.size == 0:
        resid, df = y, d.n
    else:
        resid = y - d.design[:, support] @ gaussian_refit(d, support)
        df = d.n - support.size
    return float(np.sqrt(resid @ resid / df))


def select(
    d: Dataset,
    sigma: float | None = None,
    lambda_p: float | None = None,
    kappa: float = DEFAULT_KAPPA,
    realizations: int = DEFAULT_REALIZATIONS,
    seed: int = 0,
    empty: str = "error",
) -> SelectionResult:
    """Run the two-stage Gaussian-Dantzig selection on a standardized dataset.

    ``lambda_p=None`` draws the data-driven value from :func:`estimate_lambda`;
    ``sigma=None`` estimates the noise level with :func:`estimate_sigma`.
    The support is ``{j : |beta_j| >= kappa * sigma}``.  When it is empty,
    ``empty="error"`` raises :class:`SelectionError` and ``empty="strongest"``
    keeps the single column with the largest ``|x_j'Y|``.
    """
    if empty not in ("error", "strongest"):
        raise ValueError("empty must be 'error' or 'strongest'")
    if lambda_p is None:
        lambda_p = estimate_lambda(d, realizations, seed)
    if sigma is None:
        sigma = estimate_sigma(d, lambda_p)
        log.info("estimated sigma = %.4g", sigma)
    beta = dantzig_select(d, lambda_p * sigma)
    tau = kappa * sigma
    fallback = False
    try:
        sel = threshold_select(beta, tau)
    except SelectionError:
        if empty == "error":
            raise
        sel = np.array([int(np.argmax(np.abs(d.design.T @ d.response)))])
        fallback = True
        log.info("empty support at tau=%.4g; keeping column %d", tau, sel[0])
    theta = gaussian_refit(d, sel)
    return SelectionResult(
        beta_dantzig=beta,
        lam=float(lambda_p * sigma),
        lambda_p=float(lambda_p),
        tau_threshold=float(tau),
        selected=sel,
        refit_theta=theta,
        sigma_used=float(sigma),
        fallback=fallback,
    )

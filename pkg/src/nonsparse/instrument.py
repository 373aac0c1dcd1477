"""Adjustment variables ``V = (U alpha, A Z*)`` for the re-modeled sub-model.

``Z*`` stacks the selected predictors and the first ``d`` unselected ones.
The exact construction takes ``A`` from the right singular vectors of the
cross-covariance between ``U`` and the whitened ``Z*``.  When too many
singular values survive the rank threshold a single row ``A`` is built from
the ridge-type closed form instead, keeping the smoothing dimension at two.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .model_core import ModelPartition
from .semiparam import KernelSmoother

__all__ = [
    "InstrumentError",
    "InstrumentSpec",
    "build_zstar",
    "exact_instrument",
    "approximate_row_instrument",
    "row_objective",
    "assemble_V",
    "check_identifiability",
    "cross_covariance",
    "DEFAULT_RANK_THRESHOLD",
]

DEFAULT_RANK_THRESHOLD = 0.1
EXHAUSTIVE_SIGN_LIMIT = 12


class InstrumentError(RuntimeError):
    pass


@dataclass(frozen=True)
class InstrumentSpec:
    """Linear map ``Z* -> W`` plus the weight vector on ``U``.

    ``W = ((Z* - center) @ whitener) @ A.T``.  In exact mode ``A`` has
    orthonormal rows in whitened coordinates; in approximate mode it is a
    single unit-length row.
    """

    A: np.ndarray
    mode: str
    d_pseudo: int
    effective_rank: int
    rank_threshold: float
    center: np.ndarray
    whitener: np.ndarray
    singular_values: np.ndarray
    alpha: np.ndarray | None = None
    V_values: np.ndarray | None = None

    def zstar(self, Z, U) -> np.ndarray:
        return np.hstack([np.asarray(Z, float), np.asarray(U, float)[:, : self.d_pseudo]])

    def transform(self, zstar) -> np.ndarray:
        """Centered (and whitened) ``Z*`` ready for :func:`assemble_V`."""
        return (np.asarray(zstar, dtype=float) - self.center) @ self.whitener

    def assemble(self, U, zstar, alpha=None) -> np.ndarray:
        a = self.alpha if alpha is None else alpha
        if a is None:
            a = np.zeros(np.asarray(U).shape[1])
        return assemble_V(U, a, self.A, self.transform(zstar))

    def with_alpha(self, alpha, U=None, zstar=None) -> "InstrumentSpec":
        alpha = np.asarray(alpha, dtype=float)
        V = None if U is None else self.assemble(U, zstar, alpha)
        return replace(self, alpha=alpha, V_values=V)


def build_zstar(part: ModelPartition, d_pseudo: int = 1) -> np.ndarray:
    """``[Z, first d_pseudo columns of U]``."""
    k = part.U.shape[1]
    if not 1 <= d_pseudo <= k:
        raise InstrumentError(f"d_pseudo must lie in [1, {k}], got {d_pseudo}")
    return np.hstack([part.Z, part.U[:, :d_pseudo]])


def cross_covariance(U, zstar) -> np.ndarray:
    """Sample covariance ``Cov(U, Z*)`` with divisor n."""
    U = np.asarray(U, dtype=float)
    zstar = np.asarray(zstar, dtype=float)
    n = U.shape[0]
    return (U - U.mean(axis=0)).T @ (zstar - zstar.mean(axis=0)) / n


def _inverse_sqrt(S):
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise InstrumentError("Z* is collinear; its sample covariance cannot be whitened")
    return (Q / np.sqrt(w)) @ Q.T


def exact_instrument(
    zstar, U, rank_threshold: float = DEFAULT_RANK_THRESHOLD, d_pseudo: int = 1
) -> InstrumentSpec:
    """Orthonormal ``A`` from the SVD of the whitened cross-covariance.

    Singular values below ``rank_threshold`` times the largest are dropped.
    Raises :class:`InstrumentError` when nothing survives, i.e. the
    sub-model needs no adjustment at sample resolution.
    """
    zstar = np.asarray(zstar, dtype=float)
    U = np.asarray(U, dtype=float)
    n = zstar.shape[0]
    center = zstar.mean(axis=0)
    Zc = zstar - center
    whitener = _inverse_sqrt(Zc.T @ Zc / n)
    Uc = U - U.mean(axis=0)
    sigma = Uc.T @ (Zc @ whitener) / n
    _, s, Vt = np.linalg.svd(sigma, full_matrices=False)
    u_scale = max(1.0, float(np.sqrt(np.mean(Uc * Uc))) if Uc.size else 1.0)
    if s.size == 0 or s[0] <= 1e-10 * u_scale:
        raise InstrumentError("no adjustment direction; submodel unbiased at sample resolution")
    keep = s >= rank_threshold * s[0]
    r = int(keep.sum())
    return InstrumentSpec(
        A=Vt[:r].copy(),
        mode="exact",
        d_pseudo=d_pseudo,
        effective_rank=r,
        rank_threshold=rank_threshold,
        center=center,
        whitener=whitener,
        singular_values=s,
    )


def row_objective(a, D, M) -> float:
    """``Q(a) = tr((a a' - D) M (a a' - D)')``, the mean of ``||(a_k a - D_k) z_i||^2``."""
    a = np.asarray(a, dtype=float)
    B = np.outer(a, a) - D
    return float(np.trace(B @ M @ B.T))


def _objective_batch(P, D, M):
    # P: patterns x K, rows already unit length
    aMa = np.einsum("pk,kl,pl->p", P, M, P)
    MDt = M @ D.T
    cross = np.einsum("pk,kl,pl->p", P, MDt, P)
    return np.einsum("pk,pk->p", P, P) * aMa - 2.0 * cross + np.trace(D @ M @ D.T)


def approximate_row_instrument(
    zstar, sigma_uz, c: float = 2.0, ck: float = 0.2, d_pseudo: int = 1, whiten: bool = False
) -> InstrumentSpec:
    """Single-row ``A`` from the Lagrange-multiplier ridge solution.

    Row ``k`` of ``A_hat = (D M + c ck I / 2)(M + ck I)^{-1}`` gives
    ``|a_k|``, with ``D = pinv(Sigma) Sigma`` and ``M`` the second moment of
    the centered ``Z*``.  Signs minimize ``Q``; the first nonzero entry is
    made positive since ``Q`` is invariant under a global flip.
    """
    if not (c > 0 and ck > 0):
        raise ValueError("c and ck must be positive")
    zstar = np.asarray(zstar, dtype=float)
    sigma_uz = np.asarray(sigma_uz, dtype=float)
    n, K = zstar.shape
    if sigma_uz.shape[1] != K:
        raise ValueError(f"sigma_uz has {sigma_uz.shape[1]} columns, Z* has {K}")
    center = zstar.mean(axis=0)
    Zc = zstar - center
    whitener = np.eye(K)
    if whiten:
        whitener = _inverse_sqrt(Zc.T @ Zc / n)
        Zc = Zc @ whitener
        sigma_uz = sigma_uz @ whitener
    M = Zc.T @ Zc / n
    try:
        D = np.linalg.pinv(sigma_uz) @ sigma_uz
    except np.linalg.LinAlgError as exc:
        raise InstrumentError(f"pseudoinverse of the cross-covariance failed: {exc}") from exc
    I = np.eye(K)
    A_rows = np.linalg.solve((M + ck * I).T, (D @ M + 0.5 * c * ck * I).T).T
    mag = np.linalg.norm(A_rows, axis=1)
    if not mag.any():
        raise InstrumentError("all rows of the ridge solution vanish")
    mag = mag / np.linalg.norm(mag)
    signs = _choose_signs(mag, D, M)
    a = signs * mag
    a /= np.linalg.norm(a)
    nz = np.flatnonzero(a)
    if nz.size and a[nz[0]] < 0:
        a = -a
    return InstrumentSpec(
        A=a[None, :],
        mode="approximate",
        d_pseudo=d_pseudo,
        effective_rank=1,
        rank_threshold=float("nan"),
        center=center,
        whitener=whitener,
        singular_values=np.linalg.svd(sigma_uz, compute_uv=False),
    )


def _choose_signs(mag, D, M):
    K = mag.size
    if K <= EXHAUSTIVE_SIGN_LIMIT:
        # first sign fixed at +1 (global flip symmetry)
        pats = np.array(list(itertools.product((1.0, -1.0), repeat=K - 1))).reshape(-1, K - 1)
        S = np.hstack([np.ones((pats.shape[0], 1)), pats])
        vals = _objective_batch(S * mag, D, M)
        return S[int(np.argmin(vals))]
    s = np.ones(K)
    best = row_objective(s * mag, D, M)
    while True:
        trial = np.tile(s, (K, 1))
        trial[np.arange(K), np.arange(K)] *= -1.0
        vals = _objective_batch(trial * mag, D, M)
        j = int(np.argmin(vals))
        if vals[j] >= best - 1e-14 * max(1.0, abs(best)):
            return s
        s, best = trial[j], vals[j]


def assemble_V(U, alpha, A, zstar) -> np.ndarray:
    """``[U alpha, zstar A']`` with ``zstar`` already transformed."""
    U = np.asarray(U, dtype=float)
    first = U @ np.asarray(alpha, dtype=float)
    if A is None or np.size(A) == 0:
        return first[:, None]
    return np.column_stack([first, np.asarray(zstar, dtype=float) @ np.asarray(A, float).T])


def check_identifiability(Z, V, bandwidth: float, kernel_order: int = 2) -> float:
    """Smallest eigenvalue of the sample covariance of ``Z - E[Z|V]``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    sm = KernelSmoother(V, bandwidth, kernel_order)
    R = Z - sm.smooth(Z)
    S = R.T @ R / Z.shape[0]
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])

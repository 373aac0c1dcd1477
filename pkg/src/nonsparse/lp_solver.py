"""Dense two-phase primal simplex for ``min c'u  s.t.  G u <= h, u >= 0``.

The solver keeps a full tableau in a single numpy array and applies
rank-one pivot updates.  Entering variables follow Dantzig's most-negative
reduced cost rule until a run of degenerate pivots is seen, after which the
phase finishes under Bland's rule, so termination is guaranteed.

After the final pivot the basic solution and the simplex multipliers are
recomputed from the original constraint columns, which gives an accurate
primal point and a dual certificate independent of tableau round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinearProgram",
    "LpSolution",
    "LpIterationLimit",
    "solve",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# consecutive degenerate pivots before switching to Bland's rule
DEGENERACY_TRIP = 25


@dataclass(frozen=True)
class LinearProgram:
    """``min objective @ u`` subject to ``constraint_matrix @ u <= constraint_rhs``, ``u >= 0``."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        G = np.atleast_2d(np.asarray(self.constraint_matrix, dtype=float))
        h = np.asarray(self.constraint_rhs, dtype=float).ravel()
        if c.size < 1 or h.size < 1:
            raise ValueError("a linear program needs at least one variable and one constraint")
        if G.shape != (h.size, c.size):
            raise ValueError(
                f"constraint matrix has shape {G.shape}, expected ({h.size}, {c.size})"
            )
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise ValueError("linear program contains non-finite entries")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_matrix", G)
        object.__setattr__(self, "constraint_rhs", h)

    @property
    def shape(self) -> tuple[int, int]:
        return self.constraint_matrix.shape


@dataclass(frozen=True)
class LpSolution:
    point: np.ndarray
    objective_value: float
    status: str
    iterations: int
    # y >= 0 with G'y + c >= 0; dual objective is -h'y
    dual: np.ndarray | None = None
    dual_objective: float = float("nan")
    used_bland: bool = field(default=False)

    @property
    def duality_gap(self) -> float:
        return float(self.objective_value - self.dual_objective)


class LpIterationLimit(RuntimeError):
    """Raised when the pivot cap is exceeded; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: LpSolution):
        super().__init__(message)
        self.best = best


class _Tableau:
    def __init__(self, T, basis, n_rows, tol):
        self.T = T
        self.basis = basis
        self.k = n_rows
        self.tol = tol
        self.iterations = 0
        self.used_bland = False

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        rhs = T[: self.k, -1]
        rhs[(rhs < 0) & (rhs > -self.tol)] = 0.0
        self.basis[r] = j
        self.iterations += 1

    def run(self, n_cols, max_iter):
        """Pivot on columns ``< n_cols`` until optimal; returns a status string."""
        T, k, tol = self.T, self.k, self.tol
        bland = False
        degenerate_run = 0
        basis_arr = np.asarray(self.basis)
        while True:
            d = T[-1, :n_cols]
            neg = np.flatnonzero(d < -tol)
            if neg.size == 0:
                return OPTIMAL
            if self.iterations >= max_iter:
                return "limit"
            j = int(neg[0]) if bland else int(neg[np.argmin(d[neg])])
            a = T[:k, j]
            rows = np.flatnonzero(a > tol)
            if rows.size == 0:
                return UNBOUNDED
            ratios = T[rows, -1] / a[rows]
            best = ratios.min()
            ties = rows[ratios <= best + tol * (1.0 + abs(best))]
            basis_arr = np.asarray(self.basis)
            r = int(ties[np.argmin(basis_arr[ties])])
            if best <= tol:
                degenerate_run += 1
                if degenerate_run >= DEGENERACY_TRIP and not bland:
                    bland = True
                    self.used_bland = True
            else:
                degenerate_run = 0
            self.pivot(r, j)


def _certify(lp, basis, kept_rows, c_full, tol):
    """Recompute x_B and multipliers from the original columns ``[G I]``."""
    G, h = lp.constraint_matrix, lp.constraint_rhs
    k, m = G.shape
    A_eq = np.hstack([G, np.eye(k)])[kept_rows]
    B = A_eq[:, basis]
    try:
        x_B = np.linalg.solve(B, h[kept_rows])
        pi_kept = np.linalg.solve(B.T, c_full[basis])
    except np.linalg.LinAlgError:
        return None
    x = np.zeros(m + k)
    x[basis] = x_B
    pi = np.zeros(k)
    pi[kept_rows] = pi_kept
    return x, pi


def solve(lp: LinearProgram, tol: float = 1e-9, max_iter: int | None = None) -> LpSolution:
    """Solve ``lp`` by the two-phase simplex method.

    Infeasible and unbounded problems are reported through ``status``.
    Exceeding the pivot cap (default ``50 * (k + m)``) raises
    :class:`LpIterationLimit`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    G, h, c = lp.constraint_matrix, lp.constraint_rhs, lp.objective
    k, m = G.shape
    if max_iter is None:
        max_iter = 50 * (k + m)

    neg_rows = np.flatnonzero(h < 0)
    n_art = neg_rows.size
    n_struct = m + k
    n_cols = n_struct + n_art
    T = np.zeros((k + 1, n_cols + 1))
    T[:k, :m] = G
    T[:k, m:n_struct] = np.eye(k)
    T[:k, -1] = h
    T[neg_rows, :n_struct] *= -1.0
    T[neg_rows, -1] *= -1.0
    basis = list(range(m, n_struct))
    for a, r in enumerate(neg_rows):
        T[r, n_struct + a] = 1.0
        basis[r] = n_struct + a

    tab = _Tableau(T, basis, k, tol)
    kept_rows = np.arange(k)

    if n_art:
        T[-1, :] = 0.0
        T[-1, :n_struct] = -T[neg_rows, :n_struct].sum(axis=0)
        T[-1, -1] = -T[neg_rows, -1].sum()
        status = tab.run(n_cols, max_iter)
        if status == "limit":
            raise LpIterationLimit(
                f"phase 1 exceeded {max_iter} pivots",
                _partial(tab, m, c, INFEASIBLE),
            )
        infeas = -T[-1, -1]
        if infeas > tol * (1.0 + np.abs(h).max()):
            return _partial(tab, m, c, INFEASIBLE)
        # drive artificials out of the basis, dropping redundant rows
        drop = []
        for r in range(k):
            if tab.basis[r] >= n_struct:
                row = T[r, :n_struct]
                cand = np.flatnonzero(np.abs(row) > 1e3 * tol)
                if cand.size:
                    tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
                else:
                    drop.append(r)
        keep = np.setdiff1d(np.arange(k), drop)
        kept_rows = keep
        T = np.vstack([T[keep][:, list(range(n_struct)) + [n_cols]], np.zeros((1, n_struct + 1))])
        tab.T = T
        tab.basis = [tab.basis[r] for r in keep]
        tab.k = keep.size

    c_full = np.concatenate([c, np.zeros(k)])
    T = tab.T
    T[-1, :] = 0.0
    T[-1, :n_struct] = c_full
    for r, b in enumerate(tab.basis):
        if c_full[b] != 0.0:
            T[-1] -= c_full[b] * T[r]
    status = tab.run(n_struct, max_iter)
    if status == "limit":
        raise LpIterationLimit(
            f"phase 2 exceeded {max_iter} pivots", _partial(tab, m, c, OPTIMAL)
        )
    if status == UNBOUNDED:
        return _partial(tab, m, c, UNBOUNDED)

    x = np.zeros(n_struct)
    x[tab.basis] = T[: tab.k, -1]
    pi = None
    cert = _certify(lp, np.asarray(tab.basis), kept_rows, c_full, tol)
    if cert is not None:
        x_ref, pi_ref = cert
        if x_ref.min() >= -1e3 * tol:
            x = np.maximum(x_ref, 0.0)
            pi = pi_ref
    if pi is None:
        pi = np.zeros(k)
        pi[kept_rows] = -T[-1, m + kept_rows] if kept_rows.size else 0.0
    u = x[:m]
    y = np.maximum(-pi, 0.0)
    return LpSolution(
        point=u,
        objective_value=float(c @ u),
        status=OPTIMAL,
        iterations=tab.iterations,
        dual=y,
        dual_objective=float(-h @ y),
        used_bland=tab.used_bland,
    )


def _partial(tab, m, c, status):
    x = np.zeros(tab.T.shape[1] - 1)
    x[tab.basis] = tab.T[: tab.k, -1]
    u = x[:m]
    return LpSolution(
        point=u,
        objective_value=float(c @ u),
        status=status,
        iterations=tab.iterations,
        used_bland=tab.used_bland,
    )

"""Dense two-phase primal simplex with Bland's rule.

Solves ``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0`` on small
dense problems and returns the optimal basic solution together with the
constraint duals, read from the reduced-cost row of the final tableau.
Dual sign convention is the usual one for minimisation: ``y_ub <= 0`` and
``c - A_ub^T y_ub - A_eq^T y_eq >= 0`` at optimality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None
    objective: float
    y_ub: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    dual_objective: float | None = None
    basis: tuple | None = None
    iterations: int = 0


def _as_2d(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.asarray(A, dtype=float)
    return A.reshape(-1, n)


class _Tableau:
    def __init__(self, T, basis, barred, tol):
        self.T = T
        self.basis = basis
        self.barred = barred  # columns that may never enter
        self.tol = tol
        self.pivot_tol = 1e-9
        self.iterations = 0

    def pivot(self, r, e):
        T = self.T
        T[r] /= T[r, e]
        col = T[:, e].copy()
        col[r] = 0.0
        nz = np.flatnonzero(col)
        if nz.size:
            T[nz] -= np.outer(col[nz], T[r])
        self.basis[r] = e
        self.iterations += 1

    def run(self, max_iter):
        """Iterate to optimality; returns False if unbounded."""
        T, tol = self.T, self.tol
        m = T.shape[0] - 1
        ncols = T.shape[1] - 1
        while True:
            if self.iterations >= max_iter:
                raise NumericalFailure(f"simplex exceeded {max_iter} pivots")
            d = T[m, :ncols]
            entering = -1
            for j in range(ncols):
                if d[j] < -tol and not self.barred[j]:
                    entering = j
                    break
            if entering < 0:
                return True
            col = T[:m, entering]
            best_r, best_ratio = -1, np.inf
            for r in range(m):
                if col[r] <= self.pivot_tol:
                    continue
                ratio = T[r, -1] / col[r]
                if best_r < 0:
                    best_r, best_ratio = r, ratio
                    continue
                eps = 1e-12 * max(1.0, abs(best_ratio))
                if ratio < best_ratio - eps:
                    best_r, best_ratio = r, ratio
                elif ratio <= best_ratio + eps and self.basis[r] < self.basis[best_r]:
                    # Bland: ties leave by lowest variable index
                    best_r = r
            if best_r < 0:
                return False
            self.pivot(best_r, entering)


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, tol=1e-11, max_iter=None) -> LpResult:
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A_ub, A_eq = _as_2d(A_ub, n), _as_2d(A_eq, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    if b_ub.size != m_ub or b_eq.size != m_eq:
        raise ValueError("constraint matrix and right-hand side sizes differ")
    m = m_ub + m_eq

    # rows with a negative rhs are negated; those and all equalities need an artificial
    sign = np.ones(m)
    sign[:m_ub][b_ub < 0] = -1.0
    sign[m_ub:][b_eq < 0] = -1.0
    needs_art = np.concatenate([b_ub < 0, np.ones(m_eq, dtype=bool)])
    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    ncols = n + m_ub + n_art

    T = np.zeros((m + 1, ncols + 1))
    T[:m_ub, :n] = A_ub
    T[:m_ub, n:n + m_ub] = np.eye(m_ub)
    T[:m_ub, -1] = b_ub
    T[m_ub:m, :n] = A_eq
    T[m_ub:m, -1] = b_eq
    T[:m] *= sign[:, None]
    basis = [n + r for r in range(m_ub)] + [-1] * m_eq
    for a, r in enumerate(art_rows):
        T[r, n + m_ub + a] = 1.0
        basis[r] = n + m_ub + a
    is_art = np.zeros(ncols, dtype=bool)
    is_art[n + m_ub:] = True

    if max_iter is None:
        max_iter = 50 * (m + ncols) + 100
    scale = max(1.0, float(np.abs(T[:m, -1]).max(initial=0.0)))

    # phase 1
    T[m, :] = 0.0
    for r in art_rows:
        T[m] -= T[r]
    T[m, :ncols][is_art] = 0.0
    tab = _Tableau(T, basis, np.zeros(ncols, dtype=bool), tol)
    if n_art:
        tab.run(max_iter)
        if -T[m, -1] > 1e-9 * scale:
            return LpResult(INFEASIBLE, None, np.inf, iterations=tab.iterations)
        # drive zero-level artificials out of the basis where possible
        for r in range(m):
            if is_art[basis[r]]:
                for j in range(n + m_ub):
                    if abs(T[r, j]) > 1e-9:
                        tab.pivot(r, j)
                        break

    # phase 2
    cost = np.zeros(ncols)
    cost[:n] = c
    T[m, :ncols] = cost
    T[m, -1] = 0.0
    for r in range(m):
        cb = cost[basis[r]]
        if cb != 0.0:
            T[m] -= cb * T[r]
    tab.barred = is_art
    if not tab.run(max_iter):
        return LpResult(UNBOUNDED, None, -np.inf, iterations=tab.iterations)

    x_full = np.zeros(ncols)
    for r in range(m):
        x_full[basis[r]] = T[r, -1]
    x = np.clip(x_full[:n], 0.0, None)
    d = T[m, :ncols]
    y_ub = -d[n:n + m_ub].copy()
    y_eq = np.zeros(m_eq)
    for a, r in enumerate(art_rows):
        if r >= m_ub:
            y_eq[r - m_ub] = -sign[r] * d[n + m_ub + a]
    primal = float(c @ x)
    dual = float(b_ub @ y_ub + b_eq @ y_eq)
    return LpResult(OPTIMAL, x, primal, y_ub, y_eq, dual, tuple(basis), tab.iterations)

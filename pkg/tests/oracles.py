"""Reference computations that share no code with the package.

Each oracle solves its problem the slow, obvious way so the package's
answers can be checked against it.
"""

import itertools
import math

import numpy as np


def vertex_enumeration_lp(c, A_ub, b_ub, A_eq, b_eq, tol=1e-9):
    """Minimise ``c.x`` over ``A_ub x <= b_ub, A_eq x = b_eq, x >= 0`` by trying every basis.

    Returns ``(objective, x)`` or ``(inf, None)`` when no basic feasible
    solution exists.  Only for tiny problems: the cost is C(n + m_ub, m).
    """
    c = np.asarray(c, float)
    n = c.size
    A_ub = np.asarray(A_ub, float).reshape(-1, n)
    A_eq = np.asarray(A_eq, float).reshape(-1, n)
    m_ub = A_ub.shape[0]
    # standard form with one slack per inequality
    M = np.vstack([
        np.hstack([A_ub, np.eye(m_ub)]),
        np.hstack([A_eq, np.zeros((A_eq.shape[0], m_ub))]),
    ])
    b = np.concatenate([np.asarray(b_ub, float), np.asarray(b_eq, float)])
    cost = np.concatenate([c, np.zeros(m_ub)])
    rank = np.linalg.matrix_rank(M)
    best, best_x = math.inf, None
    for cols in itertools.combinations(range(M.shape[1]), rank):
        B = M[:, cols]
        if np.linalg.matrix_rank(B) < rank:
            continue
        xb, *_ = np.linalg.lstsq(B, b, rcond=None)
        if np.abs(B @ xb - b).max() > tol * (1 + np.abs(b).max()):
            continue
        if xb.min() < -tol:
            continue
        x = np.zeros(M.shape[1])
        x[list(cols)] = np.clip(xb, 0, None)
        val = float(cost @ x)
        if val < best:
            best, best_x = val, x[:n]
    return best, best_x


def stability_lp_by_vertices(lam, mu, cost, pools):
    """The routing LP written out directly from its definition, solved by vertex enumeration."""
    lam, mu, pools = np.asarray(lam, float), np.asarray(mu, float), np.asarray(pools, float)
    I, J = mu.shape
    acts = [(i, j) for i in range(I) for j in range(J) if mu[i, j] > 0 and math.isfinite(cost[i][j])]
    c = [cost[i][j] for i, j in acts]
    A_eq = [[1.0 if a[0] == i else 0.0 for a in acts] for i in range(I)]
    A_ub = [[1.0 / mu[a] if a[1] == j else 0.0 for a in acts] for j in range(J)]
    val, x = vertex_enumeration_lp(c, A_ub, pools, A_eq, lam)
    return val, acts, x


def erlang_c(servers, offered_load):
    """Probability that an arrival waits in an M/M/N queue (Erlang's C formula)."""
    n, a = servers, offered_load
    if a >= n:
        return 1.0
    terms = sum(a**k / math.factorial(k) for k in range(n))
    tail = a**n / math.factorial(n) * n / (n - a)
    return tail / (terms + tail)


def toy_equal_load_rates(lam1, lam2):
    """Equal-load routing of the three-station toy network as a 5x5 linear system.

    Unknowns: (l11, l12, l22, l23, rho).
    """
    A = np.array([
        [1, 1, 0, 0, 0],
        [0, 0, 1, 1, 0],
        [1 / 20, 0, 0, 0, -1],
        [0, 1 / 60, 1 / 20, 0, -1],
        [0, 0, 0, 1 / 40, -1],
    ], dtype=float)
    b = np.array([lam1, lam2, 0, 0, 0], dtype=float)
    return np.linalg.solve(A, b)


def dense_h_matrix(edges, mu, n_ev):
    """Coefficients of ``w = H(v)`` by solving the full square system per unit vector.

    Rows: one sum equation per EV type with edges, one balance equation per
    consecutive pair of an EV type's stations.
    """
    edges = sorted(edges)
    E = len(edges)
    rows = []
    rhs_sel = []
    for i in range(n_ev):
        mine = [k for k, (a, _) in enumerate(edges) if a == i]
        if not mine:
            continue
        r = np.zeros(E)
        r[mine] = 1.0
        rows.append(r)
        rhs_sel.append(i)
        stations = sorted(edges[k][1] for k in mine)
        for ja, jb in zip(stations, stations[1:]):
            r = np.zeros(E)
            for k, (a, j) in enumerate(edges):
                if j == ja:
                    r[k] += 1.0 / mu[a][j] / mu[i][ja]
                if j == jb:
                    r[k] -= 1.0 / mu[a][j] / mu[i][jb]
            rows.append(r)
            rhs_sel.append(None)
    out = np.zeros((E, n_ev))
    if not E:
        return edges, out
    A = np.array(rows)
    for i in range(n_ev):
        b = np.array([1.0 if s == i else 0.0 for s in rhs_sel])
        out[:, i] = np.linalg.solve(A, b)
    return edges, out

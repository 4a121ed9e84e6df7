"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


def lp_vertex_enumeration(c, A, b, lo, hi, tol=1e-9):
    """min c.x s.t. A x <= b, lo <= x <= hi by trying every basis of n tight rows.

    Returns the optimal objective or None when infeasible. Only for tiny n.
    """
    c = np.asarray(c, float)
    n = len(c)
    rows = [np.asarray(a, float) for a in A] + [e for e in np.eye(n)] + [-e for e in np.eye(n)]
    rhs = list(map(float, b)) + list(map(float, hi)) + [-float(v) for v in lo]
    G, h = np.array(rows), np.array(rhs)
    best = None
    for idx in itertools.combinations(range(len(rows)), n):
        M = G[list(idx)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(idx)])
        if np.all(G @ x <= h + tol * (1 + np.abs(h))):
            val = float(c @ x)
            best = val if best is None else min(best, val)
    return best


def mip_exhaustive(c, A_ub, b_ub, bounds, binary):
    """Minimum over all 2^k binary assignments, each leaf solved with scipy's dual simplex."""
    c = np.asarray(c, float)
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(binary)):
        bnd = list(bounds)
        for j, v in zip(binary, bits):
            bnd[j] = (v, v)
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bnd, method="highs-ds")
        if res.status == 0 and (best is None or res.fun < best):
            best = float(res.fun)
    return best


def dbscan_reference(X, eps, min_pts):
    """Quadratic DBSCAN: core graph components via union-find, numbered by lowest core index."""
    X = np.asarray(X, float)
    n = len(X)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    adj = D <= eps
    core = adj.sum(1) >= min_pts
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if core[i] and core[j] and adj[i, j]:
                ri, rj = find(i), find(j)
                parent[max(ri, rj)] = min(ri, rj)
    roots = sorted({find(i) for i in range(n) if core[i]}, key=lambda r: min(k for k in range(n)
                                                                                if core[k] and find(k) == r))
    number = {r: k for k, r in enumerate(roots)}
    labels = np.full(n, -1)
    for i in range(n):
        if core[i]:
            labels[i] = number[find(i)]
    for i in range(n):
        if not core[i]:
            owners = [labels[j] for j in range(n) if core[j] and adj[i, j]]
            if owners:
                labels[i] = min(owners)
    return labels


def canonical(labels):
    """Relabel clusters by first appearance; noise stays -1."""
    out, seen = [], {}
    for l in labels:
        if l < 0:
            out.append(-1)
        else:
            out.append(seen.setdefault(int(l), len(seen)))
    return out


def central_difference(f, x: np.ndarray, idx, h=1e-6):
    xp, xm = x.copy(), x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def random_feasible_milp(rng, n_cont, n_bin, m):
    """Dense MILP with a known feasible point: rows A x <= A x0 + slack."""
    n = n_cont + n_bin
    A = rng.normal(size=(m, n))
    x0 = np.concatenate([rng.uniform(-1, 1, n_cont), rng.integers(0, 2, n_bin).astype(float)])
    b = A @ x0 + rng.uniform(0.0, 1.0, m)
    c = rng.normal(size=n)
    bounds = [(-2.0, 2.0)] * n_cont + [(0.0, 1.0)] * n_bin
    return c, A, b, bounds, list(range(n_cont, n))

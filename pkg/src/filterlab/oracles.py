"""Brute-force reference computations.

These deliberately avoid the fast paths they are used to check: the BL
oracles search over test-function values directly, and the HMM oracle
materializes the full joint law of state and observation sequences.
"""
from itertools import combinations, product

import numpy as np


def _union(mu, nu):
    pts = np.vstack([mu.atoms, nu.atoms])
    c = np.concatenate([mu.weights, -nu.weights])
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    return pts, c, dist


def _feasible(F, dist, tol=0.0):
    """Boolean mask over rows of F (candidate value vectors)."""
    ok = np.all(np.abs(F) <= 1.0 + tol, axis=1)
    n = F.shape[1]
    for i in range(n):
        for j in range(i + 1, n):
            ok &= np.abs(F[:, i] - F[:, j]) <= dist[i, j] + tol
    return ok


def bl_grid_search(mu, nu, coarse=0.05, finest=1e-7):
    """BL distance by exhaustive search over test-function values.

    Shifting a test function by a constant leaves the objective unchanged
    (total masses agree), so some value may be pinned at +1. The free values
    are searched on a coarse grid, then by repeated local window searches
    on grids ten times finer until the step reaches ``finest``.
    """
    pts, c, dist = _union(mu, nu)
    n = len(c)
    if n == 1:
        return 0.0
    best_val, best_f = 0.0, np.zeros(n)
    axis = np.arange(-1.0, 1.0 + 1e-12, coarse)
    for pin in range(n):
        free = [i for i in range(n) if i != pin]
        mesh = np.array(np.meshgrid(*([axis] * len(free)), indexing="ij")).reshape(len(free), -1).T
        F = np.empty((mesh.shape[0], n))
        F[:, pin] = 1.0
        F[:, free] = mesh
        ok = _feasible(F, dist)
        if not ok.any():
            continue
        vals = F[ok] @ c
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_f = float(vals[k]), F[ok][k]
    step = coarse
    offsets_1d = np.arange(-3, 4)
    while step > finest:
        step /= 10.0
        improved = True
        while improved:
            improved = False
            offs = np.array(list(product(offsets_1d, repeat=n)), dtype=float) * step
            F = np.clip(best_f + offs, -1.0, 1.0)
            ok = _feasible(F, dist)
            vals = F[ok] @ c
            k = int(np.argmax(vals))
            if vals[k] > best_val + 1e-15:
                best_val, best_f = float(vals[k]), F[ok][k]
                improved = True
    return best_val


def bl_vertex_enumeration(mu, nu):
    """BL distance as the best feasible vertex of the test-function polytope."""
    pts, c, dist = _union(mu, nu)
    n = len(c)
    rows, rhs = [], []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows += [e, -e]
        rhs += [1.0, 1.0]
        for j in range(i + 1, n):
            g = np.zeros(n)
            g[i], g[j] = 1.0, -1.0
            rows += [g, -g]
            rhs += [dist[i, j], dist[i, j]]
    rows, rhs = np.array(rows), np.array(rhs)
    best = 0.0
    for active in combinations(range(len(rows)), n):
        sub = rows[list(active)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        f = np.linalg.solve(sub, rhs[list(active)])
        if np.all(rows @ f <= rhs + 1e-9):
            best = max(best, float(f @ c))
    return best


def hmm_joint_observation_law(transition, emission, prior, length):
    """P(Y_0..Y_{length-1} = y) for every symbol sequence, as an o^length array.

    Builds the probability of every state path explicitly, then sums the
    emission products over paths.
    """
    T = np.asarray(transition, dtype=float)
    E = np.asarray(emission, dtype=float)
    s = T.shape[0]
    path_prob = np.asarray(prior, dtype=float)
    for _ in range(length - 1):
        path_prob = path_prob[..., None] * T.reshape((1,) * (path_prob.ndim - 1) + (s, s))
    # contract every state axis with the emission matrix
    law = path_prob
    for _ in range(length):
        law = np.tensordot(law, E, axes=([0], [0]))
    return law


def riccati_no_drift(p0, t):
    """P(t) for A=0, B=0, C=D=1: dP/dt = -P^2."""
    return p0 / (1.0 + p0 * t)


def riccati_unit_noise(p0, t):
    """P(t) for A=0, B=C=D=1: dP/dt = 1 - P^2."""
    th = np.tanh(t)
    return (p0 + th) / (1.0 + p0 * th)

"""Derivative-free simplex minimization (Nelder-Mead).

Deterministic: no randomness in the initial simplex or the updates, so the
same objective and start always produce the same minimizer.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0,
    initial_step: float = 0.1,
    diameter_tol: float = 1e-6,
    max_evals: int | None = None,
) -> tuple[np.ndarray, float]:
    """Minimize ``objective`` from ``x0``; returns (best point, best value).

    Stops when the simplex diameter falls below ``diameter_tol`` or after
    ``max_evals`` objective evaluations (default 2000 per dimension).
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    if dim == 0:
        raise ValueError("cannot optimize a zero-dimensional parameter vector")
    if max_evals is None:
        max_evals = 2000 * dim

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5

    points = [x0.copy()]
    for i in range(dim):
        p = x0.copy()
        p[i] += initial_step if p[i] == 0.0 else initial_step * abs(p[i]) + initial_step
        points.append(p)

    evals = 0

    def f(p: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        value = float(objective(p))
        return value if np.isfinite(value) else np.inf

    simplex = sorted(((f(p), p) for p in points), key=lambda t: t[0])

    while evals < max_evals:
        best = simplex[0][1]
        diameter = max(float(np.max(np.abs(p - best))) for _, p in simplex[1:])
        if diameter < diameter_tol:
            break

        centroid = np.mean([p for _, p in simplex[:-1]], axis=0)
        worst_val, worst = simplex[-1]

        reflected = centroid + alpha * (centroid - worst)
        fr = f(reflected)
        if simplex[0][0] <= fr < simplex[-2][0]:
            simplex[-1] = (fr, reflected)
        elif fr < simplex[0][0]:
            expanded = centroid + gamma * (centroid - worst)
            fe = f(expanded)
            simplex[-1] = (fe, expanded) if fe < fr else (fr, reflected)
        else:
            contracted = centroid + rho * (worst - centroid)
            fc = f(contracted)
            if fc < worst_val:
                simplex[-1] = (fc, contracted)
            else:
                best_point = simplex[0][1]
                simplex = [simplex[0]] + [
                    (f(shrunk), shrunk)
                    for _, p in simplex[1:]
                    for shrunk in [best_point + sigma * (p - best_point)]
                ]
        simplex.sort(key=lambda t: t[0])

    return simplex[0][1].copy(), simplex[0][0]

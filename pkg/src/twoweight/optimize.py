"""Generic numerical search primitives: power iteration and projected ascent.

Both are deterministic given their inputs.  The gradient in the ascent is a
central finite difference with per-coordinate step 1e-6 * max(1, |x_i|); the
step size backtracks from a growing trial step, and the run stops early once
no candidate step improves the objective twice in a row.
"""

from __future__ import annotations

import numpy as np

__all__ = ["power_iteration", "projected_gradient_ascent"]


def power_iteration(
    matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 200_000
) -> tuple[float, np.ndarray, bool]:
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Returns (eigenvalue, unit vector, converged); convergence means the
    residual |Av - mu v| is at most ``tol`` relative to mu.
    """
    n = matrix.shape[0]
    if n == 0:
        return 0.0, np.zeros(0), True
    v = np.full(n, 1.0 / np.sqrt(n))
    mu = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        mu = float(v @ w)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0, v, True
        residual = float(np.linalg.norm(w - mu * v))
        if residual <= tol * max(mu, np.finfo(float).tiny):
            return mu, v, True
        v = w / norm_w
    return mu, v, False


def projected_gradient_ascent(
    value_of_batch,
    x0: np.ndarray,
    project,
    max_iter: int,
    fd_step: float = 1e-6,
    init_step: float = 1.0,
    grow: float = 2.0,
    shrink: float = 0.5,
    max_backtracks: int = 25,
    stall_limit: int = 2,
) -> tuple[np.ndarray, float, int]:
    """Maximize a batch-evaluable objective over a set with a projection map.

    ``value_of_batch`` maps an array of shape (batch, n) to (batch,) values;
    ``project`` maps a single point into the feasible set.  Returns the best
    feasible point found, its value, and the number of iterations used.
    """
    x = project(np.asarray(x0, dtype=float))
    value = float(value_of_batch(x[None, :])[0])
    n = x.size
    step = init_step
    stalls = 0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        h = fd_step * np.maximum(1.0, np.abs(x))
        shifts = np.zeros((2 * n, n))
        idx = np.arange(n)
        shifts[idx, idx] = h
        shifts[n + idx, idx] = -h
        samples = value_of_batch(x[None, :] + shifts)
        gradient = (samples[:n] - samples[n:]) / (2.0 * h)
        if not np.any(gradient != 0.0):
            break

        sizes = step * grow * shrink ** np.arange(max_backtracks)
        candidates = np.stack([project(x + s * gradient) for s in sizes])
        gains = value_of_batch(candidates)
        better = np.flatnonzero(np.isfinite(gains) & (gains > value))
        if better.size:
            pick = int(better[0])
            x = candidates[pick]
            value = float(gains[pick])
            step = float(sizes[pick])
            stalls = 0
        else:
            stalls += 1
            if stalls >= stall_limit:
                break
    return x, value, iterations

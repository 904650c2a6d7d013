"""Independent reference implementations used as test oracles.

Everything here is deliberately written in the most straightforward way
possible (dense matrices, explicit loops, generic descent methods) and
stays independent of the code paths it checks.
"""

import numpy as np


def dense_gradient_matrix(width, height):
    """Dense 2N x N forward-difference matrix built entry by entry."""
    n = width * height
    gx = np.zeros((n, n))
    gy = np.zeros((n, n))
    for j in range(height):
        for i in range(width):
            r = j * width + i
            if i < width - 1:
                gx[r, r] = -1.0
                gx[r, r + 1] = 1.0
            if j < height - 1:
                gy[r, r] = -1.0
                gy[r, r + width] = 1.0
    return np.vstack([gx, gy])


def dense_divergence_matrix(width, height):
    """Dense N x 2N matrix of the case-split backward-difference divergence."""
    n = width * height
    d = np.zeros((n, 2 * n))
    for j in range(height):
        for i in range(width):
            r = j * width + i
            if width > 1:
                if i == 0:
                    d[r, r] = 1.0
                elif i == width - 1:
                    d[r, r - 1] = -1.0
                else:
                    d[r, r] = 1.0
                    d[r, r - 1] = -1.0
            if height > 1:
                if j == 0:
                    d[r, n + r] = 1.0
                elif j == height - 1:
                    d[r, n + r - width] = -1.0
                else:
                    d[r, n + r] = 1.0
                    d[r, n + r - width] = -1.0
    return d


def rof_energy(u, f, alpha):
    """Exact discrete ROF energy with isotropic TV."""
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return 0.5 * ((u - f) ** 2).sum() + alpha * np.sqrt(gx ** 2 + gy ** 2).sum()


def rof_smoothed_descent(f, alpha, epsilon=1e-6, n_iter=60000):
    """Accelerated gradient descent on the epsilon-smoothed ROF energy.

    The smoothing replaces |g| by sqrt(g^2 + eps^2); the data term makes the
    energy 1-strongly convex, so the strongly-convex momentum schedule
    applies. Independent of the primal-dual solver it is used to check.
    """
    lip = 1.0 + 8.0 * alpha / epsilon
    beta = (np.sqrt(lip) - 1.0) / (np.sqrt(lip) + 1.0)
    step = 1.0 / lip
    u = f.copy()
    z = u.copy()
    for _ in range(n_iter):
        gx = np.zeros_like(z)
        gy = np.zeros_like(z)
        gx[:, :-1] = z[:, 1:] - z[:, :-1]
        gy[:-1, :] = z[1:, :] - z[:-1, :]
        s = np.sqrt(gx ** 2 + gy ** 2 + epsilon ** 2)
        px = gx / s
        py = gy / s
        div = np.zeros_like(z)
        div[:, :-1] += px[:, :-1]
        div[:, 1:] -= px[:, :-1]
        div[:-1, :] += py[:-1, :]
        div[1:, :] -= py[:-1, :]
        grad = (z - f) - alpha * div
        u_new = z - step * grad
        z = u_new + beta * (u_new - u)
        u = u_new
    return u


def bicubic_reference(u, x, y):
    """Scalar bicubic sample by literal transcription of the two-stage formula."""
    import math

    height, width = u.shape
    ix = math.floor(x)
    iy = math.floor(y)
    if ix - 1 < 0 or iy - 1 < 0 or ix + 2 > width - 1 or iy + 2 > height - 1:
        return None
    fx = x - ix
    fy = y - iy

    def interp(p0, p1, p2, p3, t):
        return ((-0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3) * t ** 3
                + (p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3) * t ** 2
                + (-0.5 * p0 + 0.5 * p2) * t + p1)

    cols = []
    for k in range(4):
        ic = ix - 1 + k
        cols.append(interp(u[iy - 1, ic], u[iy, ic], u[iy + 1, ic], u[iy + 2, ic], fy))
    return interp(cols[0], cols[1], cols[2], cols[3], fx)


def adjoint_mismatch(op, rng, trials=20):
    """Worst relative adjoint defect |<Kx,y> - <x,K^T y>| over random probes."""
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.cols)
        y = rng.standard_normal(op.rows)
        lhs = float(op.apply(x) @ y)
        rhs = float(x @ op.apply_transpose(y))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst

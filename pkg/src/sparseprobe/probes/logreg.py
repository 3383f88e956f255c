"""Logistic regression probes: L2 via damped Newton, L1 via L-BFGS-B on a split-sign form.

Both solvers minimise

    sum_i logloss(y_i, w . x_i + b) + (1 / c) * penalty(w)

with penalty ``0.5 * ||w||^2`` (L2) or ``||w||_1`` (L1). The intercept is never
penalised. The Newton solver stops when the largest parameter update falls
below ``tol`` or after ``max_iter`` iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .base import ProbeModel, Standardizer, check_binary, register

TOL = 1e-6
MAX_ITER = 1000
# PCA regression and other "unregularized" fits use this nominal C so the
# Newton system stays well posed on separable data.
UNREGULARIZED_C = 1e6
# Also stop once an outer step improves the objective by less than this fraction;
# on (quasi-)separable data the weakly penalised optimum drifts towards infinity.
REL_IMPROVEMENT = 1e-9


@register
@dataclass(frozen=True, eq=False)
class LogRegProbe(ProbeModel):
    family = "logreg"
    coef: np.ndarray
    intercept: float
    n_iter: int = 0

    def _decision(self, Xs):
        return Xs @ self.coef + self.intercept


def objective(X, y, w, b, lam: float, reg: str) -> float:
    m = X @ w + b
    loss = float(np.sum(np.logaddexp(0.0, m) - y * m))
    if reg == "l2":
        return loss + lam * 0.5 * float(w @ w)
    if reg == "l1":
        return loss + lam * float(np.abs(w).sum())
    return loss


def _p(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


def fit_l2_newton(X, y, lam, *, tol=TOL, max_iter=MAX_ITER):
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    pen = np.full(d + 1, lam)
    pen[-1] = 0.0

    def f(th):
        return objective(X, y, th[:-1], th[-1], lam, "l2")

    fval = f(theta)
    it = 0
    for it in range(1, max_iter + 1):
        m = Xa @ theta
        p = _p(m)
        grad = Xa.T @ (p - y) + pen * theta
        wts = p * (1.0 - p)
        H = (Xa * wts[:, None]).T @ Xa + np.diag(pen)
        H[np.diag_indices_from(H)] += 1e-12
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        slope = float(grad @ step)
        while True:
            cand = theta - t * step
            fc = f(cand)
            if fc <= fval - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        delta = np.max(np.abs(cand - theta))
        stalled = fval - fc <= REL_IMPROVEMENT * max(1.0, abs(fval))
        theta, fval = cand, fc
        if delta < tol or stalled:
            break
    return theta[:-1], float(theta[-1]), it


def fit_l1_lbfgsb(X, y, lam, *, tol=TOL, max_iter=MAX_ITER):
    """L1 fit as a bound-constrained smooth problem: w = u - v with u, v >= 0.

    L-BFGS-B keeps inactive variables exactly on their bound, so zero weights
    are exact zeros.
    """
    n, d = X.shape
    z0 = np.zeros(2 * d + 1)
    # Start the intercept at the log-odds so large penalties converge at once.
    rate = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    z0[-1] = np.log(rate / (1 - rate))

    def fg(z):
        u, v, b = z[:d], z[d:2 * d], z[-1]
        m = X @ (u - v) + b
        r = _p(m) - y
        val = float(np.sum(np.logaddexp(0.0, m) - y * m)) + lam * float(u.sum() + v.sum())
        gw = X.T @ r
        return val, np.concatenate([gw + lam, lam - gw, [r.sum()]])

    bounds = [(0.0, None)] * (2 * d) + [(None, None)]
    res = minimize(fg, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": tol * 1e-4, "maxcor": 20})
    z = res.x
    return z[:d] - z[d:2 * d], float(z[-1]), int(res.nit)


def train_logreg(
    features,
    targets,
    reg: str = "l2",
    c: float = 1.0,
    *,
    standardize: bool = True,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> LogRegProbe:
    """Fit an L1- or L2-penalised logistic regression probe with strength ``1/c``."""
    X, y = check_binary(features, targets)
    if not c > 0:
        raise ValueError("c must be positive")
    if reg not in ("l1", "l2"):
        raise ValueError(f"reg must be 'l1' or 'l2', got {reg!r}")
    std = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
    Xs = std(X)
    lam = 1.0 / c
    yf = y.astype(np.float64)
    if reg == "l2":
        w, b, it = fit_l2_newton(Xs, yf, lam, tol=tol, max_iter=max_iter)
    else:
        w, b, it = fit_l1_lbfgsb(Xs, yf, lam, tol=tol, max_iter=max_iter)
    return LogRegProbe({"reg": reg, "c": float(c)}, std, w, b, it)

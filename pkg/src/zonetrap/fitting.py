"""Weighted nonlinear least squares (Levenberg-Marquardt) with analytic Jacobians."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoConvergence, RankDeficient


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    iterations: int

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def check_rank(jac: np.ndarray, rcond: float = 1e-10) -> None:
    """Raise RankDeficient when the columns of ``jac`` are (nearly) dependent."""
    s = np.linalg.svd(jac, compute_uv=False)
    if s.size == 0 or s[-1] <= rcond * s[0]:
        raise RankDeficient(f"design matrix is rank deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})")


def levenberg_marquardt(model: Callable, jacobian: Callable, x, y, sigma, p0, max_iter: int = 200,
                        xtol: float = 1e-10, lam0: float = 1e-3, absolute_sigma: bool = True) -> FitResult:
    """Minimize sum(((y - model(x, p)) / sigma)^2).

    ``jacobian(x, p)`` returns d model / d p with shape (len(x), len(p)).
    The covariance is (J^T W J)^-1, scaled by the reduced chi^2 unless
    ``absolute_sigma``.
    """
    y = np.asarray(y, dtype=float)
    w = 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    p = np.array(p0, dtype=float)
    n_p = p.size
    if y.size < n_p:
        raise ValueError("fewer data points than parameters")

    def cost(p):
        r = (y - model(x, p)) * w
        return r, float(r @ r)

    r, c = cost(p)
    lam = lam0
    for it in range(1, max_iter + 1):
        j = jacobian(x, p) * w[:, None]
        a = j.T @ j
        g = j.T @ r
        diag = np.diag(a).copy()
        diag[diag == 0] = 1.0
        while True:
            step = np.linalg.solve(a + lam * np.diag(diag), g)
            p_new = p + step
            r_new, c_new = cost(p_new)
            if c_new <= c:
                break
            lam *= 10.0
            if lam > 1e16:
                # no downhill step exists at this precision: at the minimum
                step = np.zeros_like(p)
                p_new, r_new, c_new = p, r, c
                break
        p, r, c = p_new, r_new, c_new
        lam = max(lam / 10.0, 1e-12)
        # vector norms, so a parameter sitting at zero cannot stall convergence
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            break
    else:
        raise NoConvergence(f"no convergence within {max_iter} iterations")

    j = jacobian(x, p) * w[:, None]
    check_rank(j)
    cov = np.linalg.inv(j.T @ j)
    dof = y.size - n_p
    if not absolute_sigma and dof > 0:
        cov = cov * (c / dof)
    return FitResult(p, cov, c, dof, it)

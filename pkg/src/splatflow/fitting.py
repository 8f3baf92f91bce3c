"""Least-squares fitting of 1-D trajectories with the three curve families:
polynomial, Fourier, and their sum (the full dual-domain model).

All fits are linear least squares in the coefficients. The Fourier-bearing
models also search the time-dilation factor lambda_s, because the harmonic
arguments l * (lambda_s * t) make frequency selection nonlinear: a coarse
grid scan picks the best residual, then a few zoom passes around the winner
sharpen lambda_s to ~1e-3, where the phase error over the unit interval is
negligible. lambda_b is redundant for fitting a single free trajectory (a
phase shift the coefficients absorb) and stays 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_LAMBDA_GRID = np.linspace(0.5, 45.0, 90)


@dataclass
class FitResult:
    model: str
    poly_coeffs: np.ndarray      # (N+1,) or empty
    fourier_sin: np.ndarray      # (L,) or empty
    fourier_cos: np.ndarray      # (L,) or empty
    lambda_s: float
    fitted: np.ndarray
    rmse: float

    @property
    def n_params(self) -> int:
        n = self.poly_coeffs.size + self.fourier_sin.size + self.fourier_cos.size
        return n + (1 if (self.fourier_sin.size and self.lambda_s != 1.0) else 0)


def _design(t: np.ndarray, poly_order: int | None, fourier_order: int,
            lambda_s: float) -> np.ndarray:
    cols = []
    if poly_order is not None:
        cols.extend(t ** n for n in range(poly_order + 1))
    ts = lambda_s * t
    for l in range(1, fourier_order + 1):
        cols.append(np.cos(l * ts))
        cols.append(np.sin(l * ts))
    return np.column_stack(cols)


def _solve(t, y, poly_order, fourier_order, lambda_s):
    X = _design(t, poly_order, fourier_order, lambda_s)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    rmse = float(np.sqrt(np.mean((fitted - y) ** 2)))
    return coef, fitted, rmse


def _split_coef(coef, poly_order, fourier_order):
    np_ = 0 if poly_order is None else poly_order + 1
    pc = coef[:np_]
    four = coef[np_:].reshape(fourier_order, 2) if fourier_order else np.empty((0, 2))
    return pc, four[:, 0], four[:, 1]


def _search_lambda(t, y, poly_order, fourier_order, grid):
    """Coarse grid scan over lambda_s, then zoom passes around the winner.

    Each zoom rescans +-step around the best point at 1/8 the step, down to
    1e-3; on a tie the earlier (coarser) winner is kept, so noiseless on-grid
    frequencies come back exactly.
    """
    def scan(lams, best):
        for lam in lams:
            cand = _solve(t, y, poly_order, fourier_order, lam)
            if best is None or cand[2] < best[2]:
                best = (*cand, float(lam))
        return best

    best = scan(grid, None)
    lo = float(grid[0])
    step = float(grid[1] - grid[0]) if len(grid) > 1 else 0.0
    while step > 1e-3:
        lam = best[3]
        best = scan(np.linspace(max(lam - step, lo), lam + step, 17), best)
        step /= 8.0
    return best


def fit_poly(t: np.ndarray, y: np.ndarray, order: int) -> FitResult:
    coef, fitted, rmse = _solve(t, y, order, 0, 1.0)
    return FitResult("poly", coef, np.empty(0), np.empty(0), 1.0, fitted, rmse)


def fit_fourier(t: np.ndarray, y: np.ndarray, order: int,
                lambda_grid: np.ndarray | None = None) -> FitResult:
    grid = DEFAULT_LAMBDA_GRID if lambda_grid is None else np.asarray(lambda_grid)
    coef, fitted, rmse, lam = _search_lambda(t, y, None, order, grid)
    _, fs, fc = _split_coef(coef, None, order)
    return FitResult("fourier", np.empty(0), fs, fc, lam, fitted, rmse)


def fit_dddm(t: np.ndarray, y: np.ndarray, poly_order: int, fourier_order: int,
             lambda_grid: np.ndarray | None = None) -> FitResult:
    grid = DEFAULT_LAMBDA_GRID if lambda_grid is None else np.asarray(lambda_grid)
    coef, fitted, rmse, lam = _search_lambda(t, y, poly_order, fourier_order, grid)
    pc, fs, fc = _split_coef(coef, poly_order, fourier_order)
    return FitResult("dddm", pc, fs, fc, lam, fitted, rmse)


def fit_trajectory(t: np.ndarray, y: np.ndarray, model: str, poly_order: int,
                   fourier_order: int,
                   lambda_grid: np.ndarray | None = None) -> FitResult:
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("trajectory must be matching 1-D (t, value) arrays")
    if model == "poly":
        return fit_poly(t, y, poly_order)
    if model == "fourier":
        return fit_fourier(t, y, fourier_order, lambda_grid)
    if model == "dddm":
        return fit_dddm(t, y, poly_order, fourier_order, lambda_grid)
    raise ValueError(f"unknown model {model!r}")


def matched_budgets(budget: int) -> dict[str, tuple[int | None, int]]:
    """Orders (poly_order, fourier_order) giving each family ~budget coefficients.

    poly: N+1 = budget. fourier: 2L = budget (rounded down). dddm: a small
    polynomial plus harmonics filling the rest.
    """
    if budget < 6:
        raise ValueError("budget too small to split across families")
    dddm_poly = 3
    return {
        "poly": (budget - 1, 0),
        "fourier": (None, budget // 2),
        "dddm": (dddm_poly, (budget - dddm_poly - 1) // 2),
    }

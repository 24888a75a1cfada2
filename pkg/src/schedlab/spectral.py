"""Quotient matrices behind the A_min ratio and their spectral quantities.

For ``s = 0`` and ``l = 1`` the A_min ratio of a length mix ``x`` over
``1..u`` equals ``x'Ax / x'Bx`` with

    a_ij = min(i,j)^2 / (i j) * ((i+j)^2 / 2 - min(i,j)^2)
    b_ij = min(i,j)^2

so its supremum is bounded by the largest generalized eigenvalue of (A, B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar


class ConvergenceError(RuntimeError):
    pass


def _check_u(u: int) -> None:
    if u < 1:
        raise ValueError("dimension u must be >= 1")


def a_matrix(u: int) -> np.ndarray:
    _check_u(u)
    i = np.arange(1, u + 1, dtype=float)
    I, J = np.meshgrid(i, i, indexing="ij")
    m = np.minimum(I, J)
    return m * m / (I * J) * (0.5 * (I + J) ** 2 - m * m)


def b_matrix(u: int) -> np.ndarray:
    _check_u(u)
    i = np.arange(1, u + 1, dtype=float)
    m = np.minimum.outer(i, i)
    return m * m


def b_inverse_closed_form(u: int) -> np.ndarray:
    """Tridiagonal inverse of ``B``.

    Diagonal ``4i/(4i^2-1)`` for ``i < u`` and ``1/(2u-1)`` at ``i = u``;
    off-diagonal ``-1/(2 min(i,j) + 1)``.
    """
    _check_u(u)
    i = np.arange(1, u + 1, dtype=float)
    diag = 4 * i / (4 * i * i - 1)
    diag[-1] = 1 / (2 * u - 1)
    off = -1 / (2 * i[:-1] + 1)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def _binv_apply(y: np.ndarray, diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    out = diag * y
    out[:-1] += off * y[1:]
    out[1:] += off * y[:-1]
    return out


@dataclass
class SpectralPair:
    u: int
    A: np.ndarray
    B: np.ndarray
    B_inv: np.ndarray

    @property
    def C(self) -> np.ndarray:
        """``B^-1 A``."""
        return self.B_inv @ self.A

    def is_positive_definite(self) -> tuple[bool, bool]:
        """Cholesky test of ``A`` and ``B``."""
        out = []
        for m in (self.A, self.B):
            try:
                np.linalg.cholesky(m)
                out.append(True)
            except np.linalg.LinAlgError:
                out.append(False)
        return out[0], out[1]

    def quotient(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.A @ x / (x @ self.B @ x))


def build_pair(u: int) -> SpectralPair:
    return SpectralPair(u, a_matrix(u), b_matrix(u), b_inverse_closed_form(u))


def harmonic(u: int) -> float:
    return math.fsum(1.0 / k for k in range(1, u + 1))


def _exact_a(i: int, j: int) -> Fraction:
    m = min(i, j)
    return Fraction(m * m, i * j) * (Fraction((i + j) ** 2, 2) - m * m)


def trace_binv_a(u: int, exact: bool = False) -> float | Fraction:
    """``tr(B^-1 A)``; with ``exact=True`` the sum is done in rationals.

    Only the tridiagonal band of ``B^-1`` contributes, so the sum has
    ``3u - 2`` terms.
    """
    _check_u(u)
    if exact:
        total = Fraction(0)
        for i in range(1, u + 1):
            d = Fraction(1, 2 * u - 1) if i == u else Fraction(4 * i, 4 * i * i - 1)
            total += d * _exact_a(i, i)
            if i < u:
                total += 2 * Fraction(-1, 2 * i + 1) * _exact_a(i, i + 1)
        return total
    pair = build_pair(u)
    return float(np.einsum("ij,ji->", pair.B_inv, pair.A))


@dataclass
class RayleighResult:
    rho: float
    vector: np.ndarray  # B-normalized, sign fixed so the largest entry is positive
    nonnegative: bool
    iterations: int


def rayleigh_max(u: int, tol: float = 1e-10, max_iter: int = 100_000) -> RayleighResult:
    """Largest value of ``x'Ax / x'Bx`` by power iteration on ``B^-1 A``."""
    _check_u(u)
    A = a_matrix(u)
    B = b_matrix(u)
    binv = b_inverse_closed_form(u)
    diag, off = np.diag(binv).copy(), np.diag(binv, 1).copy()
    x = np.ones(u)
    x /= math.sqrt(x @ B @ x)
    rho = x @ A @ x
    for it in range(1, max_iter + 1):
        y = _binv_apply(A @ x, diag, off)
        y /= math.sqrt(y @ B @ y)
        new = y @ A @ y
        step = np.abs(y - x).max()
        x = y
        if abs(new - rho) <= tol * max(1.0, abs(new)) and step <= math.sqrt(tol):
            rho = new
            break
        rho = new
    else:
        raise ConvergenceError(f"power iteration did not converge for u={u}")
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    scale = np.abs(x).max()
    return RayleighResult(float(rho), x, bool((x >= -1e-12 * scale).all()), it)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    srt = np.sort(v)[::-1]
    css = np.cumsum(srt) - 1
    k = np.arange(1, len(v) + 1)
    r = k[srt - css / k > 0][-1]
    return np.maximum(v - css[r - 1] / r, 0)


def simplex_max(u: int, x0: np.ndarray | None = None, iters: int = 20_000, tol: float = 1e-13) -> tuple[float, np.ndarray]:
    """Maximum of the quotient over mixes (``x >= 0``, ``sum x = 1``).

    Projected gradient ascent with backtracking; used when the principal
    eigenvector has negative entries, and as an independent check otherwise.
    """
    pair = build_pair(u)
    A, B = pair.A, pair.B
    x = np.full(u, 1.0 / u) if x0 is None else _project_simplex(np.asarray(x0, float))
    f = pair.quotient(x)
    lr = 1.0
    for _ in range(iters):
        na, nb = x @ A @ x, x @ B @ x
        g = 2 * (A @ x * nb - B @ x * na) / (nb * nb)
        while True:
            y = _project_simplex(x + lr * g)
            fy = pair.quotient(y)
            if fy >= f or lr < 1e-14:
                break
            lr *= 0.5
        done = fy - f <= tol
        x, f = y, max(f, fy)
        lr *= 2
        if done:
            break
    return f, x


@dataclass
class LogFit:
    c1: float
    c2: float
    c3: float
    r2: float | None  # None when the data are constant
    degenerate: bool = False

    def __call__(self, u):
        return self.c1 * np.log(np.asarray(u, float) + self.c2) + self.c3


def _linear_sub_fit(u, y, c2):
    X = np.column_stack([np.log(u + c2), np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return coef, float(resid @ resid)


def fit_log_curve(u_min: int, u_max: int, values: np.ndarray | None = None) -> LogFit:
    """Least-squares fit of ``c1 log(u + c2) + c3`` to ``rho(u)``.

    ``c2`` is found by bounded scalar search with ``c1, c3`` solved in closed
    form for each trial. ``values`` may replace the computed ``rho`` series.
    """
    if u_max - u_min < 10:
        raise ValueError("fit range must span at least 10 values of u")
    u = np.arange(u_min, u_max + 1, dtype=float)
    y = np.array([rayleigh_max(int(k)).rho for k in u]) if values is None else np.asarray(values, float)
    if len(y) != len(u):
        raise ValueError("values must have one entry per u")
    sst = float(((y - y.mean()) ** 2).sum())
    if sst <= 1e-24 * max(1.0, float(y @ y)):
        return LogFit(0.0, 0.0, float(y.mean()), None, degenerate=True)
    lo = -u_min + 1e-6
    res = minimize_scalar(lambda c: _linear_sub_fit(u, y, c)[1], bounds=(lo, float(u_max)), method="bounded",
                          options={"xatol": 1e-10})
    c2 = float(res.x)
    (c1, c3), sse = _linear_sub_fit(u, y, c2)
    return LogFit(float(c1), c2, float(c3), 1 - sse / sst)


def spectral_table(u_max: int, u_min: int = 1) -> list[tuple[int, float, float]]:
    """Rows ``(u, rho(u), H_u)``."""
    return [(u, rayleigh_max(u).rho, harmonic(u)) for u in range(u_min, u_max + 1)]

"""Recovering ``M`` from the fitted spectrum and a four-point correlator.

The four-point prediction is linear in the residue tensor
``rho[a, b, c] = M[0, a] Minv[a, b] M[b, c] Minv[c, 0]``, so the squared
simplex residual collapses to a small dense least-squares form that is set up
once per problem. Each objective evaluation then costs a 4x4 inverse, an
einsum and one small matrix-vector product instead of a pass over the
simplex. :func:`objective_reference` keeps the literal simplex sum for testing.

Gauge: ``rho`` is unchanged by ``M -> c D M D^-1`` for scalar ``c`` and
diagonal ``D``. We fix that freedom by setting the whole first row of ``M``
to ones, which leaves ``m (m - 1)`` free entries (doubled for complex ``M``).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .correlations import CorrTensor, epsilon_metric
from .errors import DimensionMismatch, FitFailed, ValidationError
from .expfit import ExpSumModel
from .predict import predict_tensor
from .simplex import gap_classes

log = logging.getLogger(__name__)

COND_MAX = 1e10
TIE_TOL = 1e-14
RESTART_SCALE = 0.05


def residue_tensor4(M: np.ndarray, Minv: np.ndarray | None = None) -> np.ndarray:
    """``rho[a, b, c]`` of the four-point function in the chain convention."""
    if Minv is None:
        Minv = np.linalg.inv(M)
    return (M[0][:, None] * Minv)[:, :, None] * (M * Minv[:, 0])[None, :, :]


def two_point_residues(M: np.ndarray, Minv: np.ndarray | None = None) -> np.ndarray:
    if Minv is None:
        Minv = np.linalg.inv(M)
    return M[0] * Minv[:, 0]


def gauge_transform(M: np.ndarray, c: complex, D: np.ndarray) -> np.ndarray:
    """``c * diag(D) @ M @ diag(D)^-1``."""
    D = np.asarray(D)
    return c * (D[:, None] * M / D[None, :])


def gauge_fix(M: np.ndarray) -> np.ndarray:
    """Representative of the gauge orbit of ``M`` with first row all ones.

    Raises:
        ValidationError: if an entry of the first row vanishes.
    """
    M = np.asarray(M)
    row = M[0]
    if np.any(np.abs(row) < 1e-14 * max(1.0, float(np.max(np.abs(M))))):
        raise ValidationError("first row of M has a zero entry; gauge cannot be fixed")
    return row[:, None] * M / (row[0] * row[None, :])


@dataclass(eq=False)
class MFitProblem:
    """Inputs of the ``M`` reconstruction.

    Attributes:
        spectrum: fitted eigenvalues and two-point residues.
        target4: measured four-point correlator.
        target2: measured two-point correlator (used for ``eps2``).
        real_m: restrict ``M`` to real matrices.
        num_starts: number of random Nelder-Mead starts.
        beta, gamma: weights of the residue and normalisation penalties.
    """

    spectrum: ExpSumModel
    target4: CorrTensor
    target2: CorrTensor
    real_m: bool = True
    num_starts: int = 100
    seed: int = 0
    beta: float = 1.0
    gamma: float = 1.0
    max_evals: int = 20_000
    xatol: float = 5e-11
    _design: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.target4.order != 4 or self.target2.order != 2:
            raise ValidationError("targets must be of order 4 and 2")
        if self.target4.grid != self.target2.grid:
            raise DimensionMismatch("target tensors must share a grid")
        if self.num_starts < 1:
            raise ValidationError("num_starts must be positive")
        if self.real_m and np.any(np.abs(self.spectrum.lam.imag) > 0):
            log.warning(
                "real M cannot represent sine components of complex-pair modes; "
                "consider complex M for this spectrum"
            )

    @property
    def m(self) -> int:
        return self.spectrum.m

    @property
    def num_params(self) -> int:
        free = self.m * (self.m - 1)
        return free if self.real_m else 2 * free

    def design(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Reduced form ``(B, y, c)`` with ``sum (C4_pred - C4)^2 = |B u - y|^2 + c``.

        ``u`` stacks the real and imaginary parts of the flattened ``rho``.
        """
        if self._design is None:
            self._design = _build_design(self.spectrum.lam, self.target4)
        return self._design

    def params_to_m(self, p: np.ndarray) -> np.ndarray:
        m = self.m
        M = np.ones((m, m), dtype=np.complex128)
        free = m * (m - 1)
        M[1:] = p[:free].reshape(m - 1, m)
        if not self.real_m:
            M[1:] += 1j * p[free:].reshape(m - 1, m)
        return M

    def m_to_params(self, M: np.ndarray) -> np.ndarray:
        G = gauge_fix(M)[1:].ravel()
        if self.real_m:
            return G.real.copy()
        return np.concatenate([G.real, G.imag])


def _build_design(lam: np.ndarray, target4: CorrTensor) -> tuple[np.ndarray, np.ndarray, float]:
    grid = target4.grid
    gc = gap_classes(grid.count, 4)
    E = np.exp(np.multiply.outer(grid.step * np.arange(grid.count), lam))
    g = gc.gaps
    phi = np.einsum("pa,pb,pc->pabc", E[g[:, 0]], E[g[:, 1]], E[g[:, 2]]).reshape(len(g), -1)
    sw = np.sqrt(gc.multiplicity.astype(float))
    A = sw[:, None] * np.concatenate([phi.real, -phi.imag], axis=1)
    sums = np.bincount(gc.class_of, weights=target4.values, minlength=gc.num_classes)
    mean = sums / gc.multiplicity
    scatter = float(np.sum((target4.values - mean[gc.class_of]) ** 2))
    t = sw * mean
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > 1e-14 * s[0]
    U, s, Vt = U[:, keep], s[keep], Vt[keep]
    y = U.T @ t
    outside = t - U @ y
    return s[:, None] * Vt, y, scatter + float(outside @ outside)


def _penalties(r: np.ndarray, problem: MFitProblem) -> float:
    dr = r - problem.spectrum.r
    total = r.sum() - 1.0
    return problem.beta * np.vdot(dr, dr).real + problem.gamma * (total.real**2 + total.imag**2)


def _inverse_or_none(M: np.ndarray) -> np.ndarray | None:
    """Inverse of ``M`` or ``None`` if its 1-norm condition number exceeds ``COND_MAX``."""
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return None
    cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > COND_MAX:
        return None
    return Minv


def _objective_parts(M: np.ndarray, problem: MFitProblem) -> float:
    Minv = _inverse_or_none(M)
    if Minv is None:
        return np.inf
    B, y, const = problem.design()
    rho = residue_tensor4(M, Minv).ravel()
    res = B @ np.concatenate([rho.real, rho.imag]) - y
    return float(res @ res) + const + float(_penalties(M[0] * Minv[:, 0], problem))


def objective(Mcand: np.ndarray, problem: MFitProblem) -> float:
    """Squared four-point simplex residual plus residue and normalisation penalties.

    Singular or ill-conditioned candidates (condition number above ``1e10``)
    return ``inf``.
    """
    M = np.asarray(Mcand, dtype=np.complex128)
    if M.shape != (problem.m, problem.m):
        raise DimensionMismatch(f"M must be {problem.m}x{problem.m}")
    return _objective_parts(M, problem)


def objective_reference(Mcand: np.ndarray, problem: MFitProblem) -> float:
    """Same quantity as :func:`objective`, summed entry by entry over the simplex."""
    M = np.asarray(Mcand, dtype=np.complex128)
    Minv = _inverse_or_none(M)
    if Minv is None:
        return np.inf
    pred = predict_tensor(problem.spectrum.lam, M, 4, problem.target4.grid)
    diff = pred.values - problem.target4.values
    return float(diff @ diff) + float(_penalties(two_point_residues(M, Minv), problem))


@dataclass(frozen=True, eq=False)
class MFitResult:
    M: np.ndarray
    objective: float
    eps4: float
    eps2: float
    start_index: int
    converged: bool
    n_starts: int = 0
    seed: int = 0
    nfev: int = 0
    history: tuple = ()

    def to_dict(self) -> dict:
        out = {"M": np.real(self.M).tolist()}
        if np.any(np.imag(self.M) != 0):
            out["M_im"] = np.imag(self.M).tolist()
        out.update(
            objective=self.objective,
            eps4=self.eps4,
            eps2=self.eps2,
            start_index=self.start_index,
            n_starts=self.n_starts,
            seed=self.seed,
            converged=self.converged,
        )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> MFitResult:
        M = np.array(data["M"], dtype=np.complex128)
        if "M_im" in data:
            M = M + 1j * np.array(data["M_im"], dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch("M must be a square matrix")
        return cls(
            M=M,
            objective=float(data["objective"]),
            eps4=float(data["eps4"]),
            eps2=float(data["eps2"]),
            start_index=int(data["start_index"]),
            converged=bool(data.get("converged", True)),
            n_starts=int(data.get("n_starts", 0)),
            seed=int(data.get("seed", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> MFitResult:
        return cls.from_dict(json.loads(Path(path).read_text()))


def initial_guess(problem: MFitProblem, start_index: int) -> np.ndarray | None:
    """Uniform ``[-1, 1]`` entries, gauge-fixed; ``None`` if the draw is unusable."""
    rng = np.random.default_rng([problem.seed, start_index])
    m = problem.m
    M = rng.uniform(-1, 1, (m, m)).astype(np.complex128)
    if not problem.real_m:
        M += 1j * rng.uniform(-1, 1, (m, m))
    try:
        p = problem.m_to_params(M)
    except ValidationError:
        return None
    return p if np.isfinite(objective(problem.params_to_m(p), problem)) else None


def _run_start(problem: MFitProblem, start_index: int, record_history: bool = False):
    p0 = initial_guess(problem, start_index)
    if p0 is None:
        return None

    def f(p):
        return _objective_parts(problem.params_to_m(p), problem)

    history: list[float] = []
    callback = None
    if record_history:
        def callback(xk):
            val = f(xk)
            history.append(min(val, history[-1]) if history else val)

    opts = dict(maxfev=problem.max_evals, xatol=problem.xatol, fatol=np.inf, adaptive=True)
    sol = minimize(f, p0, method="Nelder-Mead", callback=callback, options=opts)
    nfev = sol.nfev
    converged = bool(sol.nfev < problem.max_evals)
    if not converged:
        # stagnation: one restart from the best vertex with a fresh 5% simplex
        x = sol.x
        simplex = np.vstack([x, x + np.diag(RESTART_SCALE * np.maximum(np.abs(x), 1e-3))])
        again = minimize(f, x, method="Nelder-Mead", callback=callback, options=dict(opts, initial_simplex=simplex))
        nfev += again.nfev
        if again.fun <= sol.fun:
            sol = again
            converged = bool(again.nfev < problem.max_evals)
    return sol.x, float(sol.fun), converged, nfev, tuple(history)


def fit_m(problem: MFitProblem, *, threads: int = 1, record_history: bool = False) -> MFitResult:
    """Multi-start Nelder-Mead over the gauge-fixed entries of ``M``.

    Results are independent of ``threads``: every start has its own random
    stream derived from ``(seed, start_index)`` and ties within ``1e-14`` go
    to the lowest start index.
    """
    problem.design()
    starts = range(problem.num_starts)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda k: _run_start(problem, k, record_history), starts))
    else:
        runs = [_run_start(problem, k, record_history) for k in starts]
    best_k = None
    for k, run in enumerate(runs):
        if run is None:
            log.debug("start %d rejected: singular initializer", k)
            continue
        log.debug("start %d: objective %.3e after %d evaluations", k, run[1], run[3])
        if best_k is None or run[1] < runs[best_k][1] - TIE_TOL:
            best_k = k
    if best_k is None:
        raise FitFailed("every Nelder-Mead start was rejected as singular")
    p, fun, converged, nfev, history = runs[best_k]
    M = problem.params_to_m(p)
    if problem.real_m:
        M = M.real.copy()
    pred4 = predict_tensor(problem.spectrum.lam, M, 4, problem.target4.grid)
    pred2 = predict_tensor(problem.spectrum.lam, M, 2, problem.target2.grid)
    eps4 = epsilon_metric(problem.target4, pred4).mean
    eps2 = epsilon_metric(problem.target2, pred2).mean
    log.info("best start %d: objective %.3e, eps4 %.3e, eps2 %.3e", best_k, fun, eps4, eps2)
    return MFitResult(
        M=M,
        objective=fun,
        eps4=float(eps4),
        eps2=float(eps2),
        start_index=best_k,
        converged=converged,
        n_starts=problem.num_starts,
        seed=problem.seed,
        nfev=nfev,
        history=history,
    )

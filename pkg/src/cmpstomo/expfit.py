"""Fitting ``C2(tau) = Re sum_k r_k exp(lambda_k tau)`` to two-point data.

The eigenvalues of the transfer matrix are read off the two-point function in
three steps: a matrix-pencil estimate (exact for noiseless exponential sums),
a bounded least-squares refinement with conjugate pairing built into the
parametrisation, and finally pinning the dominant eigenvalue to exactly zero
as required by the normalisation gauge.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.optimize import least_squares

from .cmps import order_eigenvalues
from .correlations import CorrTensor
from .errors import DimensionMismatch, FitDivergence, InfeasibleInitializer, OrderTooHigh, ValidationError

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10
REAL_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class ExpSumModel:
    """Exponential sum with conjugate-paired complex terms.

    ``lam`` is kept in transfer-spectrum order: descending real part, then
    descending imaginary part, so index 0 is the dominant mode.
    """

    lam: np.ndarray
    r: np.ndarray
    residual: float | None = None
    pinned_dominant: bool = False

    def __post_init__(self) -> None:
        lam = np.array(self.lam, dtype=np.complex128).ravel()
        r = np.array(self.r, dtype=np.complex128).ravel()
        if lam.shape != r.shape:
            raise DimensionMismatch("lam and r must have the same length")
        perm = order_eigenvalues(lam)
        object.__setattr__(self, "lam", lam[perm])
        object.__setattr__(self, "r", r[perm])

    @property
    def m(self) -> int:
        return len(self.lam)

    def evaluate(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return np.real(np.exp(np.multiply.outer(tau, self.lam)) @ self.r)

    def to_dict(self) -> dict:
        return {
            "lambda": [[z.real, z.imag] for z in self.lam],
            "r": [[z.real, z.imag] for z in self.r],
            "residual": self.residual,
            "m": self.m,
            "pinned_dominant": self.pinned_dominant,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExpSumModel:
        lam = [complex(a, b) for a, b in data["lambda"]]
        r = [complex(a, b) for a, b in data["r"]]
        if "m" in data and int(data["m"]) != len(lam):
            raise DimensionMismatch("field 'm' disagrees with the number of eigenvalues")
        return cls(lam, r, data.get("residual"), bool(data.get("pinned_dominant", False)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> ExpSumModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _real_tol(lam: np.ndarray) -> float:
    return REAL_RTOL * max(1.0, float(np.max(np.abs(lam), initial=0.0)))


def mode_structure(lam: np.ndarray) -> tuple[list[int], list[tuple[int, int]]]:
    """Split modes into real ones and conjugate pairs ``(upper, lower)``.

    Raises:
        ValidationError: if a complex eigenvalue has no conjugate partner.
    """
    lam = np.asarray(lam)
    tol = _real_tol(lam)
    real = [k for k in range(len(lam)) if abs(lam[k].imag) <= tol]
    upper = [k for k in range(len(lam)) if lam[k].imag > tol]
    lower = [k for k in range(len(lam)) if lam[k].imag < -tol]
    pairs = []
    for k in upper:
        if not lower:
            raise ValidationError("complex eigenvalues must come in conjugate pairs")
        j = min(lower, key=lambda q: abs(lam[q] - lam[k].conjugate()))
        if abs(lam[j] - lam[k].conjugate()) > 1e3 * tol:
            raise ValidationError(f"eigenvalue {lam[k]} has no conjugate partner")
        lower.remove(j)
        pairs.append((k, j))
    if lower:
        raise ValidationError("complex eigenvalues must come in conjugate pairs")
    return real, pairs


def conjugate_partner(lam: np.ndarray) -> np.ndarray:
    """Index permutation mapping each mode to its conjugate partner (itself if real)."""
    real, pairs = mode_structure(lam)
    partner = np.arange(len(lam))
    for k, j in pairs:
        partner[k], partner[j] = j, k
    return partner


def hankel_singular_values(samples: np.ndarray) -> np.ndarray:
    y = np.asarray(samples, dtype=float)
    L = len(y) // 2
    return np.linalg.svd(sla.hankel(y[: len(y) - L], y[len(y) - L - 1 :]), compute_uv=False)


def detect_order(samples: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = hankel_singular_values(samples)
    return int(np.count_nonzero(s > rtol * s[0]))


def prony_initialize(samples, step: float, m: int, *, start: float = 0.0) -> ExpSumModel:
    """Matrix-pencil estimate of ``m`` exponentials from uniform samples.

    ``samples[i]`` is the signal at ``start + i * step``. Residues refer to
    ``tau = 0``.
    """
    y = np.asarray(samples, dtype=float).ravel()
    N = len(y)
    if step <= 0:
        raise ValidationError("step must be positive")
    if m < 1 or N < 2 * m:
        raise ValidationError(f"need at least {2 * m} samples for order {m}, got {N}")
    L = N // 2
    H = sla.hankel(y[: N - L], y[N - L - 1 :])
    _, s, vh = np.linalg.svd(H)
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0]))
    if rank < m:
        raise OrderTooHigh(m, rank)
    V = vh[:m].T
    z = np.linalg.eigvals(np.linalg.lstsq(V[:-1], V[1:], rcond=None)[0])
    if np.any(z == 0):
        raise ValidationError("pencil produced a zero root; reduce the model order")
    z = z.astype(np.complex128)
    lam = np.log(z) / step
    # a negative real root has no conjugate partner; keep only its decay rate
    negative = np.abs(z.imag) <= 1e-12 * np.abs(z)
    negative &= z.real < 0
    lam[negative] = np.log(np.abs(z[negative])) / step
    if np.any(negative) or np.any(np.abs(lam.imag) * step > 0.95 * np.pi):
        warnings.warn(
            "an eigenvalue sits near the aliasing limit |Im lambda| * step = pi; refine the grid",
            RuntimeWarning,
            stacklevel=2,
        )
    vander = np.exp(np.multiply.outer(start + step * np.arange(N), lam))
    r = np.linalg.lstsq(vander, y.astype(np.complex128), rcond=None)[0]
    real, pairs = mode_structure(lam)
    # enforce exact pairing so the model is a real signal
    r[real] = r[real].real
    for k, j in pairs:
        lam[j] = lam[k].conjugate()
        avg = 0.5 * (r[k] + r[j].conjugate())
        r[k], r[j] = avg, avg.conjugate()
    lam[real] = lam[real].real
    return ExpSumModel(lam, r)


class _Layout:
    """Real parameter vector for a conjugate-paired exponential sum.

    Real mode ``k`` contributes ``(a_k, c_k)`` with term ``c_k exp(a_k tau)``;
    a pair contributes ``(a, b, u, v)`` with term ``2 Re((u + iv) exp((a + ib) tau))``.
    A pinned real mode keeps ``a = 0`` and contributes only ``c``. All other
    decay rates are bounded by ``a <= -min_decay``.
    """

    def __init__(self, lam: np.ndarray, pinned: int | None = None, min_decay: float = 0.0) -> None:
        self.real, self.pairs = mode_structure(lam)
        if pinned is not None:
            if pinned not in self.real:
                raise ValidationError("only a real mode can be pinned")
            self.real.remove(pinned)
        self.pinned = pinned
        self.min_decay = min_decay
        self.m = len(lam)
        self.size = (pinned is not None) + 2 * len(self.real) + 4 * len(self.pairs)

    def pack(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        p = [] if self.pinned is None else [r[self.pinned].real]
        for k in self.real:
            p += [lam[k].real, r[k].real]
        for k, _ in self.pairs:
            p += [lam[k].real, abs(lam[k].imag), r[k].real, r[k].imag if lam[k].imag > 0 else -r[k].imag]
        return np.array(p, dtype=float)

    def unpack(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lam = np.empty(self.m, dtype=np.complex128)
        r = np.empty(self.m, dtype=np.complex128)
        i = 0
        if self.pinned is not None:
            lam[self.pinned], r[self.pinned] = 0.0, p[0]
            i = 1
        for k in self.real:
            lam[k], r[k] = p[i], p[i + 1]
            i += 2
        for k, j in self.pairs:
            a, b, u, v = p[i : i + 4]
            lam[k], lam[j] = complex(a, b), complex(a, -b)
            r[k], r[j] = complex(u, v), complex(u, -v)
            i += 4
        return lam, r

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = ([-np.inf], [np.inf]) if self.pinned is not None else ([], [])
        top = -self.min_decay
        for _ in self.real:
            lo += [-np.inf, -np.inf]
            hi += [top, np.inf]
        for _ in self.pairs:
            lo += [-np.inf, 0.0, -np.inf, -np.inf]
            hi += [top, np.inf, np.inf, np.inf]
        return np.array(lo), np.array(hi)

    def model_and_jac(self, p: np.ndarray, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = np.zeros_like(tau)
        J = np.empty((len(tau), self.size))
        i = 0
        if self.pinned is not None:
            f += p[0]
            J[:, 0] = 1.0
            i = 1
        for _ in self.real:
            a, c = p[i], p[i + 1]
            e = np.exp(a * tau)
            f += c * e
            J[:, i] = c * tau * e
            J[:, i + 1] = e
            i += 2
        for _ in self.pairs:
            a, b, u, v = p[i : i + 4]
            ea = np.exp(a * tau)
            cos, sin = ea * np.cos(b * tau), ea * np.sin(b * tau)
            # 2 Re((u + iv) e^{(a+ib)tau}) = 2 (u cos - v sin)
            g = 2 * (u * cos - v * sin)
            f += g
            J[:, i] = tau * g
            J[:, i + 1] = -2 * tau * (u * sin + v * cos)
            J[:, i + 2] = 2 * cos
            J[:, i + 3] = -2 * sin
            i += 4
        return f, J


def refine_least_squares(
    init: ExpSumModel,
    samples,
    step: float,
    weights=None,
    *,
    start: float = 0.0,
    max_iter: int = 500,
    rtol: float = 1e-12,
    hold_dominant: bool = False,
    min_decay: float = 0.0,
) -> ExpSumModel:
    """Weighted least-squares refinement with ``Re lambda <= 0`` and pairing constraints.

    Args:
        hold_dominant: keep the real mode nearest zero at exactly zero while
            refining (the normalisation gauge fixes it a priori).
        min_decay: every other mode must satisfy ``Re lambda <= -min_decay``.

    Raises:
        InfeasibleInitializer: if ``init`` violates the constraints.
        FitDivergence: if the objective ends above its starting value.
    """
    y = np.asarray(samples, dtype=float).ravel()
    tau = start + step * np.arange(len(y))
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite, non-negative and match the samples")
    pinned = _dominant_index(init.lam) if hold_dominant else None
    free = np.ones(init.m, dtype=bool)
    if pinned is not None:
        free[pinned] = False
    if np.any(init.lam.real[free] > -min_decay + _real_tol(init.lam)):
        raise InfeasibleInitializer(f"initial eigenvalues violate Re lambda <= {-min_decay:g}: {init.lam}")
    layout = _Layout(init.lam, pinned, min_decay)
    lo, hi = layout.bounds()
    p0 = np.clip(layout.pack(init.lam, init.r), lo, hi)
    sw = np.sqrt(w)

    def resid(p):
        return sw * (layout.model_and_jac(p, tau)[0] - y)

    def jac(p):
        return sw[:, None] * layout.model_and_jac(p, tau)[1]

    cost0 = 0.5 * float(resid(p0) @ resid(p0))
    if cost0 == 0.0:
        lam, r = layout.unpack(p0)
        return ExpSumModel(lam, r, residual=0.0, pinned_dominant=pinned is not None)
    sol = least_squares(
        resid, p0, jac=jac, bounds=(lo, hi), method="trf",
        ftol=rtol, xtol=1e-15, gtol=1e-15, max_nfev=max_iter, x_scale="jac",
    )
    x, cost = sol.x, sol.cost
    if not np.isfinite(cost) or cost > cost0 * (1 + 1e-12):
        # a start already at the rounding floor may drift by rounding; keep it then
        floor = 1e-16 * float(w @ (y * y))
        if not np.isfinite(cost) or cost > max(cost0 * (1 + 1e-12), floor):
            raise FitDivergence(f"refinement increased the objective from {2 * cost0:.3g} to {2 * cost:.3g}")
        x, cost = p0, cost0
    lam, r = layout.unpack(x)
    log.debug("refinement: %d evaluations, objective %.3g", sol.nfev, 2 * cost)
    return ExpSumModel(lam, r, residual=float(np.sqrt(2 * cost)), pinned_dominant=pinned is not None)


def _dominant_index(lam: np.ndarray) -> int:
    real, _ = mode_structure(lam)
    if not real:
        raise ValidationError("no real eigenvalue available to pin at zero")
    return min(real, key=lambda q: abs(lam[q]))


def _fit_residues(lam: np.ndarray, y: np.ndarray, tau: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted linear least squares for the residues of a fixed real-signal spectrum."""
    real, pairs = mode_structure(lam)
    cols = [np.exp(lam[k].real * tau) for k in real]
    for k, _ in pairs:
        e = np.exp(lam[k] * tau)
        cols += [2 * e.real, -2 * e.imag]
    A = np.column_stack(cols)
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(sw[:, None] * A, sw * y, rcond=None)[0]
    r = np.empty(len(lam), dtype=np.complex128)
    for i, k in enumerate(real):
        r[k] = coef[i]
    i = len(real)
    for k, j in pairs:
        r[k] = complex(coef[i], coef[i + 1])
        r[j] = r[k].conjugate()
        i += 2
    return r


def pin_dominant(model: ExpSumModel, samples, step: float, weights=None, *, start: float = 0.0) -> ExpSumModel:
    """Snap the real eigenvalue nearest zero to exactly zero and refit the residues."""
    y = np.asarray(samples, dtype=float).ravel()
    tau = start + step * np.arange(len(y))
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).ravel()
    k = _dominant_index(model.lam)
    lam = model.lam.copy()
    lam[k] = 0.0
    r = _fit_residues(lam, y, tau, w)
    res = float(np.sqrt(np.sum(w * (np.real(np.exp(np.multiply.outer(tau, lam)) @ r) - y) ** 2)))
    return ExpSumModel(lam, r, residual=res, pinned_dominant=True)


def two_point_samples(c2: CorrTensor) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Translation-averaged ``C2`` on ``tau = 0, step, 2 step, ...``.

    Returns ``(samples, multiplicity, std_err or None)``.
    """
    if c2.order != 2:
        raise ValidationError("two-point samples need an order-2 tensor")
    _, mean, err = c2.gap_averaged()
    mult = c2.grid.count - np.arange(c2.grid.count)
    return mean, mult, err


def fit_spectrum(
    c2: CorrTensor,
    m: int | None = None,
    *,
    weighting: str = "auto",
    pin: bool = True,
    min_decay: float | None = None,
) -> ExpSumModel:
    """Full spectrum extraction from a two-point tensor.

    Args:
        c2: measured or synthetic two-point correlator.
        m: model order (``d**2``); ``None`` picks the numerical Hankel rank.
        weighting: ``"uniform"`` weighs every simplex entry equally,
            ``"inverse-variance"`` uses ``1 / stdErr**2``, ``"auto"`` uses the
            latter when standard errors are present.
        pin: hold the dominant eigenvalue at zero (normalisation gauge).
        min_decay: floor on the decay rate of the other modes. Defaults to
            ``0.1 / window`` when pinning: a slower mode is indistinguishable
            from the plateau on the sampled window and would only duplicate it.
    """
    y, mult, err = two_point_samples(c2)
    if weighting == "auto":
        weighting = "inverse-variance" if err is not None and np.all(err > 0) else "uniform"
    if weighting == "inverse-variance":
        if err is None or np.any(err <= 0):
            raise ValidationError("inverse-variance weighting needs positive standard errors")
        w = 1.0 / err**2
    elif weighting == "uniform":
        # averaging a translation class then weighting by its size reproduces the
        # uniform sum over all simplex entries up to a constant
        w = mult.astype(float)
    else:
        raise ValidationError(f"unknown weighting {weighting!r}")
    if m is None:
        m = detect_order(y)
    step = c2.grid.step
    tau = step * np.arange(len(y))
    window = max(tau[-1], step)
    if min_decay is None:
        min_decay = 0.1 / window if pin else 0.0
    if pin and m > 1:
        # the known zero mode drops out of first differences; fit the rest there
        rest = prony_initialize(np.diff(y), step, m - 1)
        lam = np.concatenate([[0.0], rest.lam])
    else:
        lam = prony_initialize(y, step, m).lam.copy()
    free = np.ones(m, dtype=bool)
    if pin:
        k = _dominant_index(lam)
        lam[k], free[k] = 0.0, False
    # push modes that decay too slowly (or grow) back to a rate the window resolves
    slow = free & (lam.real > -min_decay)
    if np.any(slow):
        log.info("moving %d initial eigenvalue(s) to Re lambda = %.3g", int(slow.sum()), -max(1.0 / window, min_decay))
        lam[slow] = -max(1.0 / window, 2 * min_decay) + 1j * lam[slow].imag
    init = ExpSumModel(lam, _fit_residues(lam, y, tau, w))
    model = refine_least_squares(init, y, step, w, hold_dominant=pin, min_decay=min_decay)
    return pin_dominant(model, y, step, w) if pin else model

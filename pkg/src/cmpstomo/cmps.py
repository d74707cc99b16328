"""Translation-invariant continuous matrix product states.

A state is the pair ``(Q, R)`` of ``d x d`` complex matrices. Everything the
tomography pipeline needs is derived from the transfer matrix

    T = conj(Q) (x) 1 + 1 (x) Q + conj(R) (x) R,

with ``np.kron`` ordering throughout: ``kron(A, B)[i*d + j, k*d + l] =
A[i, k] * B[j, l]``, i.e. the first factor acts on the conjugated copy.

Phase correlators are evaluated in two independent ways:

* :func:`eval_correlator_direct` multiplies matrix exponentials of ``T``
  sandwiched between ``A = conj(R)^(1/2) (x) R^(-1/2)`` and its inverse and
  closes the chain with the stationary projector (null vectors of ``T``);
* :func:`eval_correlator_diagonal` works in the eigenbasis of ``T``, where the
  same chain becomes ``e1^T M D(tau1) M^-1 D(tau2) M ... M^-1 e1`` with
  ``M = X^-1 A X`` and ``D(tau) = diag(exp(lambda * tau))``. Equivalently the
  coefficient of ``exp(lambda_k1 tau1 + ...)`` is
  ``rho[k1, ..., k(n-1)] = M[0, k1] Minv[k1, k2] M[k2, k3] ... Minv[k(n-1), 0]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegenerateSpectrum,
    CmpsTomoError,
    DimensionMismatch,
    GenerationFailed,
    IllConditionedBasis,
    NoPrincipalRoot,
    NotNormalized,
    SingularR,
    ValidationError,
)

NORMALIZED_ATOL = 1e-12
DEGENERACY_TOL = 1e-10
BASIS_COND_MAX = 1e12
R_COND_MAX = 1e12


@dataclass(frozen=True, eq=False)
class CmpsState:
    """Variational data ``(Q, R)`` of a translation-invariant cMPS."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        Q = np.array(self.Q, dtype=np.complex128)
        R = np.array(self.R, dtype=np.complex128)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch(f"Q must be square, got shape {Q.shape}")
        if R.shape != Q.shape:
            raise DimensionMismatch(f"Q has shape {Q.shape} but R has shape {R.shape}")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(R))):
            raise ValidationError("Q and R must be finite")
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "Q_re": self.Q.real.ravel().tolist(),
            "Q_im": self.Q.imag.ravel().tolist(),
            "R_re": self.R.real.ravel().tolist(),
            "R_im": self.R.imag.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> CmpsState:
        d = int(data["d"])

        def mat(re_key: str, im_key: str) -> np.ndarray:
            re = np.asarray(data[re_key], dtype=float)
            im = np.asarray(data[im_key], dtype=float)
            if re.size != d * d or im.size != d * d:
                raise DimensionMismatch(f"{re_key}/{im_key} must hold {d * d} entries")
            return (re + 1j * im).reshape(d, d)

        return cls(mat("Q_re", "Q_im"), mat("R_re", "R_im"))

    def save(self, path: str | Path) -> None:
        # json writes floats with repr(), the shortest string that round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> CmpsState:
        return cls.from_dict(json.loads(Path(path).read_text()))


def order_eigenvalues(lam: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Permutation sorting by descending real part, then descending imaginary part.

    Real parts closer than ``rtol * max(1, max|lam|)`` count as ties, so that
    the two members of a conjugate pair are ordered by their imaginary parts
    rather than by rounding noise in their real parts.
    """
    lam = np.asarray(lam)
    tol = rtol * max(1.0, float(np.max(np.abs(lam), initial=0.0)))
    order = sorted(range(len(lam)), key=lambda k: -lam[k].real)
    groups: list[list[int]] = []
    for k in order:
        if groups and lam[groups[-1][0]].real - lam[k].real <= tol:
            groups[-1].append(k)
        else:
            groups.append([k])
    perm: list[int] = []
    for g in groups:
        perm.extend(sorted(g, key=lambda k: -lam[k].imag))
    return np.array(perm, dtype=int)


def build_transfer_matrix(state: CmpsState) -> np.ndarray:
    eye = np.eye(state.d)
    Q, R = state.Q, state.R
    return np.kron(Q.conj(), eye) + np.kron(eye, Q) + np.kron(R.conj(), R)


def _sorted_eigenvalues(T: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvals(T)
    return lam[order_eigenvalues(lam)]


def _check_simple_dominant(lam: np.ndarray) -> None:
    if len(lam) > 1 and abs(lam[0].real - lam[1].real) < DEGENERACY_TOL:
        raise DegenerateSpectrum(
            f"dominant eigenvalue not simple: {lam[0]:.6g} and {lam[1]:.6g}"
        )


def normalize(state: CmpsState) -> CmpsState:
    """Shift ``Q`` by a multiple of the identity so that ``max Re lambda(T) = 0``.

    Shifting ``Q -> Q - c*1`` moves every eigenvalue of ``T`` by ``-2 Re c``.
    """
    lam = _sorted_eigenvalues(build_transfer_matrix(state))
    _check_simple_dominant(lam)
    shift = lam[0].real / 2.0
    if shift == 0.0:
        return state
    return CmpsState(state.Q - shift * np.eye(state.d), state.R)


def _normalized_tol(T: np.ndarray) -> float:
    return NORMALIZED_ATOL * max(1.0, np.linalg.norm(T, 2))


def is_normalized(state: CmpsState) -> bool:
    T = build_transfer_matrix(state)
    lam = _sorted_eigenvalues(T)
    return abs(lam[0].real) <= _normalized_tol(T)


@dataclass(frozen=True, eq=False)
class TransferSpectrum:
    """Eigen-decomposition ``T X = X diag(eigenvalues)``, dominant eigenvalue first."""

    eigenvalues: np.ndarray
    X: np.ndarray
    Xinv: np.ndarray
    normalized: bool

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def gap(self) -> float:
        """``-max_{k>1} Re lambda_k``; infinite for a one-dimensional spectrum."""
        if self.size == 1:
            return float("inf")
        return float(-self.eigenvalues[1].real)


def spectral_decompose(state: CmpsState) -> TransferSpectrum:
    T = build_transfer_matrix(state)
    lam, X = np.linalg.eig(T)
    perm = order_eigenvalues(lam)
    lam, X = lam[perm], X[:, perm]
    cond = np.linalg.cond(X)
    if not np.isfinite(cond) or cond > BASIS_COND_MAX:
        raise IllConditionedBasis(
            f"eigenvector matrix condition number {cond:.3g} exceeds {BASIS_COND_MAX:.0e}; "
            "use eval_correlator_direct instead"
        )
    normalized = abs(lam[0].real) <= _normalized_tol(T)
    if normalized:
        _check_simple_dominant(lam)
    return TransferSpectrum(lam, X, np.linalg.inv(X), normalized)


def _check_R(R: np.ndarray) -> None:
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > R_COND_MAX:
        raise SingularR(f"R is singular to working precision (condition number {cond:.3g})")
    ev = np.linalg.eigvals(R)
    scale = max(1.0, float(np.max(np.abs(ev))))
    on_axis = (np.abs(ev.imag) <= 1e-12 * scale) & (ev.real <= 0)
    if np.any(on_axis):
        raise NoPrincipalRoot(f"R has eigenvalue(s) on the closed negative real axis: {ev[on_axis]}")


def half_power_factors(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A = conj(R)^(1/2) (x) R^(-1/2)`` and ``A^-1 = conj(R)^(-1/2) (x) R^(1/2)``."""
    R = np.asarray(R, dtype=np.complex128)
    _check_R(R)
    root = sla.sqrtm(R)
    root_conj = sla.sqrtm(R.conj())
    A = np.kron(root_conj, np.linalg.inv(root))
    Ainv = np.kron(np.linalg.inv(root_conj), root)
    return A, Ainv


@dataclass(frozen=True, eq=False)
class ResidueTensor:
    """``M`` in the eigenbasis of ``T`` together with its inverse."""

    M: np.ndarray
    Minv: np.ndarray
    order: int | None = None

    @property
    def size(self) -> int:
        return self.M.shape[0]

    def two_point_residues(self) -> np.ndarray:
        """Coefficients ``r_k = M[0, k] Minv[k, 0]`` of ``C2(tau) = sum_k r_k exp(lambda_k tau)``."""
        return self.M[0] * self.Minv[:, 0]

    def rho(self, order: int) -> np.ndarray:
        """Full coefficient tensor of shape ``(m,) * (order - 1)``."""
        _check_order(order)
        m = self.size
        tensor = self.M[0]
        for j in range(1, order - 1):
            step = self.Minv if j % 2 == 1 else self.M
            tensor = tensor[..., :, None] * step.reshape((1,) * (j - 1) + (m, m))
        return tensor * self.Minv[:, 0].reshape((1,) * (order - 2) + (m,))


def m_in_diagonal_basis(state: CmpsState, spectrum: TransferSpectrum, order: int | None = None) -> ResidueTensor:
    if spectrum.size != state.d**2:
        raise DimensionMismatch("spectrum does not belong to a state of this bond dimension")
    A, _ = half_power_factors(state.R)
    M = spectrum.Xinv @ A @ spectrum.X
    return ResidueTensor(M, np.linalg.inv(M), order)


def _check_order(order: int) -> None:
    if order < 2 or order % 2:
        raise ValidationError(f"correlator order must be even and >= 2, got {order}")


def chain_values(M: np.ndarray, Minv: np.ndarray, lam: np.ndarray, gaps: np.ndarray) -> np.ndarray:
    """Evaluate ``e1^T M D(g1) Minv D(g2) M ... Minv e1`` for many gap vectors.

    Args:
        M, Minv: ``m x m`` matrices in the eigenbasis.
        lam: the ``m`` eigenvalues, dominant one first.
        gaps: array ``(P, n-1)`` of non-negative gaps (any length unit matching ``lam``).

    Returns:
        Complex array of ``P`` correlator values (before taking the real part).
        Cost is ``O(P * n * m^2)``: a chain of matrix-vector products.
    """
    gaps = np.atleast_2d(np.asarray(gaps, dtype=float))
    lam = np.asarray(lam)
    v = np.broadcast_to(M[0], (gaps.shape[0], len(lam))).astype(np.complex128)
    last = gaps.shape[1] - 1
    for j in range(gaps.shape[1]):
        v = v * np.exp(gaps[:, j : j + 1] * lam[None, :])
        if j == last:
            return v @ Minv[:, 0]
        v = v @ (Minv if j % 2 == 0 else M)
    raise ValidationError("at least one gap is required")


def eval_correlator_diagonal(
    residues: ResidueTensor,
    spectrum: TransferSpectrum,
    gaps,
    *,
    return_imag: bool = False,
):
    """``Re sum rho[k1..] exp(lambda_k1 tau1) ... exp(lambda_k(n-1) tau(n-1))``."""
    gaps = np.asarray(gaps, dtype=float).ravel()
    _check_order(len(gaps) + 1)
    if np.any(gaps < 0):
        raise ValidationError("gaps must be non-negative")
    if residues.size != spectrum.size:
        raise DimensionMismatch("residue tensor and spectrum sizes differ")
    value = chain_values(residues.M, residues.Minv, spectrum.eigenvalues, gaps[None, :])[0]
    if return_imag:
        return float(value.real), float(value.imag)
    return float(value.real)


def stationary_projector(T: np.ndarray) -> np.ndarray:
    """Rank-one projector onto the null space of ``T`` along its left null space.

    Uses singular vectors rather than the eigen-decomposition so that the
    direct evaluator stays independent of the spectral route.
    """
    _, _, vh = np.linalg.svd(T)
    right = vh[-1].conj()
    _, _, vh_left = np.linalg.svd(T.T)
    left = vh_left[-1].conj()
    return np.outer(right, left) / (left @ right)


def eval_correlator_direct(state: CmpsState, positions, *, return_imag: bool = False):
    """Evaluate the phase correlator at sorted positions via matrix exponentials."""
    x = np.asarray(positions, dtype=float).ravel()
    _check_order(len(x))
    if np.any(np.diff(x) < 0):
        raise ValidationError("positions must be sorted ascending")
    T = build_transfer_matrix(state)
    if not is_normalized(state):
        raise NotNormalized("state must be normalized (dominant transfer eigenvalue 0)")
    A, Ainv = half_power_factors(state.R)
    chain = np.eye(T.shape[0], dtype=np.complex128)
    for j, tau in enumerate(np.diff(x)):
        chain = chain @ (A if j % 2 == 0 else Ainv) @ sla.expm(T * tau)
    value = np.trace(chain @ Ainv @ stationary_projector(T))
    if return_imag:
        return float(value.real), float(value.imag)
    return float(value.real)


@dataclass(frozen=True, eq=False)
class ExactModel:
    """Spectrum plus residue tensor of a concrete state (ground truth for tests)."""

    state: CmpsState
    spectrum: TransferSpectrum
    residues: ResidueTensor = field(repr=False)

    @classmethod
    def from_state(cls, state: CmpsState) -> ExactModel:
        spectrum = spectral_decompose(state)
        if not spectrum.normalized:
            raise NotNormalized("state must be normalized before building the spectral model")
        return cls(state, spectrum, m_in_diagonal_basis(state, spectrum))


def random_state(d: int, rng: np.random.Generator) -> CmpsState:
    """Unnormalized state with i.i.d. standard complex Gaussian entries."""

    def crandn() -> np.ndarray:
        return (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)

    return CmpsState(crandn(), crandn())


def generate_state(d: int, seed: int = 0, *, min_gap: float = 0.05, max_tries: int = 100) -> CmpsState:
    """Random normalized state usable by both evaluators.

    Draws are rejected until ``R`` has a principal square root, the
    eigenbasis of ``T`` is well conditioned and the spectral gap exceeds
    ``min_gap``.

    Raises:
        GenerationFailed: if ``max_tries`` draws are all rejected.
    """
    if d < 1:
        raise ValidationError("bond dimension must be at least 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        try:
            state = normalize(random_state(d, rng))
            _check_R(state.R)
            if spectral_decompose(state).gap > min_gap:
                return state
        except CmpsTomoError:
            continue
    raise GenerationFailed(f"no acceptable d={d} state in {max_tries} draws (seed {seed})")

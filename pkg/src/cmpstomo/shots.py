"""Synthetic interference shots: fluctuating phase field plus a global offset.

Each shot is ``theta(x) = phi(x) + varphi`` where ``phi`` is a zero-mean
Gaussian field with a chosen covariance and ``varphi`` is one random constant
per shot (the global phase diffusion of the double well). The Gaussian model
is a stand-in with analytically known moments, not a model of the physics:
for a Gaussian phase difference ``E cos(Delta) = exp(-Var(Delta) / 2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correlations import Grid1D, ShotEnsemble
from .errors import ValidationError

PSD_TOL = 1e-10

_CONFIG_KEYS = {"kernel", "sigma2", "xi", "global_phase_spread", "seed"}


@dataclass(frozen=True, eq=False)
class PhaseFieldModel:
    """Covariance of ``phi`` plus the spread of the per-shot global phase.

    Attributes:
        kernel: ``"exp"`` for ``sigma2 * exp(-|x - y| / xi)`` or ``"matrix"``
            for the user-supplied ``matrix``.
        sigma2: variance of ``phi`` in rad^2.
        xi: correlation length in micrometres.
        global_phase_spread: standard deviation of ``varphi`` in radians.
        seed: seed of the random stream.
    """

    kernel: str = "exp"
    sigma2: float = 0.25
    xi: float = 10.0
    global_phase_spread: float = 0.0
    seed: int = 0
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kernel not in ("exp", "matrix"):
            raise ValidationError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "exp":
            if self.sigma2 < 0 or self.xi <= 0:
                raise ValidationError("need sigma2 >= 0 and xi > 0")
        elif self.matrix is None:
            raise ValidationError("kernel 'matrix' requires a covariance matrix")
        if self.global_phase_spread < 0:
            raise ValidationError("global_phase_spread must be non-negative")

    def covariance(self, grid: Grid1D) -> np.ndarray:
        if self.kernel == "exp":
            x = grid.positions
            return self.sigma2 * np.exp(-np.abs(x[:, None] - x[None, :]) / self.xi)
        cov = np.asarray(self.matrix, dtype=float)
        if cov.shape != (grid.count, grid.count):
            raise ValidationError(f"covariance matrix must be {grid.count}x{grid.count}")
        return cov

    @classmethod
    def from_config(cls, config: dict) -> PhaseFieldModel:
        unknown = set(config) - _CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**config)

    @classmethod
    def load(cls, path: str | Path) -> PhaseFieldModel:
        return cls.from_config(json.loads(Path(path).read_text()))

    def to_config(self) -> dict:
        if self.kernel != "exp":
            raise ValidationError("only the exponential kernel has a JSON form")
        return {
            "kernel": self.kernel,
            "sigma2": self.sigma2,
            "xi": self.xi,
            "global_phase_spread": self.global_phase_spread,
            "seed": self.seed,
        }


def _factor(cov: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == cov`` from a clipped eigendecomposition."""
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValidationError("covariance matrix is not symmetric")
    w, v = np.linalg.eigh(cov)
    if w.min() < -PSD_TOL * max(1.0, abs(w.max())):
        raise ValidationError(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_shots(model: PhaseFieldModel, grid: Grid1D, num_shots: int) -> ShotEnsemble:
    """Draw ``num_shots`` phase profiles, deterministic given ``model.seed``.

    The field draws come first and the global offsets are always drawn (then
    scaled), so two models differing only in ``global_phase_spread`` share the
    same ``phi`` stream.
    """
    if num_shots < 1:
        raise ValidationError("num_shots must be at least 1")
    factor = _factor(model.covariance(grid))
    rng = np.random.default_rng(model.seed)
    phi = rng.standard_normal((num_shots, grid.count)) @ factor.T
    varphi = model.global_phase_spread * rng.standard_normal(num_shots)
    return ShotEnsemble(grid, phi + varphi[:, None])


def gaussian_two_point(model: PhaseFieldModel, grid: Grid1D) -> np.ndarray:
    """Exact ``E cos(theta_x - theta_y)`` for every grid pair, as a ``count x count`` matrix."""
    cov = model.covariance(grid)
    var_diff = np.diag(cov)[:, None] + np.diag(cov)[None, :] - 2 * cov
    return np.exp(-var_diff / 2)

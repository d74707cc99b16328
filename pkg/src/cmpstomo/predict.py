"""Higher-order predictions from a reconstructed ``(lambda, M)`` pair and their scoring."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cmps import CmpsState, ExactModel, chain_values
from .correlations import CorrTensor, Deviation, Grid1D, _check_even, epsilon_metric
from .errors import CostGuardExceeded, DimensionMismatch, ValidationError
from .simplex import gap_classes, simplex_rank

log = logging.getLogger(__name__)

MAX_DEFAULT_ORDER = 6
MAX_ORDER = 8
BOUND_TOL = 1e-6


def predict_tensor(lam: np.ndarray, M: np.ndarray, order: int, grid: Grid1D) -> CorrTensor:
    """Evaluate every simplex entry of an order-``order`` correlator.

    Each translation class is evaluated once by chain contraction and then
    scattered onto the simplex.
    """
    _check_even(order)
    lam = np.asarray(lam, dtype=np.complex128)
    M = np.asarray(M, dtype=np.complex128)
    if M.shape != (len(lam), len(lam)):
        raise DimensionMismatch("M must be square with one row per eigenvalue")
    gc = gap_classes(grid.count, order)
    vals = chain_values(M, np.linalg.inv(M), lam, gc.gaps * grid.step).real
    return CorrTensor(order, grid, vals[gc.class_of])


@dataclass(frozen=True, eq=False)
class ReconstructedModel:
    """Spectrum and ``M`` matrix of a reconstruction, plus free-form provenance."""

    lam: np.ndarray
    M: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        lam = np.array(self.lam, dtype=np.complex128).ravel()
        M = np.array(self.M, dtype=np.complex128)
        if M.shape != (lam.size, lam.size):
            raise DimensionMismatch(f"M must be {lam.size}x{lam.size}, got {M.shape}")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(M))):
            raise ValidationError("model contains non-finite entries")
        if np.linalg.cond(M) > 1e12:
            raise ValidationError("M is singular")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "M", M)

    @property
    def m(self) -> int:
        return self.lam.size

    @classmethod
    def from_state(cls, state: CmpsState) -> ReconstructedModel:
        exact = ExactModel.from_state(state)
        return cls(exact.spectrum.eigenvalues, exact.residues.M, {"source": "exact state"})

    @classmethod
    def from_fits(cls, spectrum, mfit, provenance: dict | None = None) -> ReconstructedModel:
        prov = {"spectrum_residual": spectrum.residual, "eps2": mfit.eps2, "eps4": mfit.eps4,
                "seed": mfit.seed, "start_index": mfit.start_index}
        prov.update(provenance or {})
        return cls(spectrum.lam, mfit.M, prov)

    def to_dict(self) -> dict:
        return {
            "lambda": [[z.real, z.imag] for z in self.lam],
            "M": self.M.real.tolist(),
            "M_im": self.M.imag.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ReconstructedModel:
        lam = [complex(a, b) for a, b in data["lambda"]]
        M = np.array(data["M"], dtype=np.complex128)
        if "M_im" in data:
            M = M + 1j * np.array(data["M_im"], dtype=float)
        return cls(lam, M, dict(data.get("provenance", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> ReconstructedModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: ReconstructedModel, order: int, grid: Grid1D, *, allow_high_order: bool = False) -> CorrTensor:
    """Predicted correlator of even ``order`` on the full simplex of ``grid``.

    Orders above 6 need ``allow_high_order``; orders above 8 are refused.
    Entries with ``|C| > 1 + 1e-6`` are logged, never clipped.
    """
    _check_even(order)
    if order > MAX_ORDER or (order > MAX_DEFAULT_ORDER and not allow_high_order):
        raise CostGuardExceeded(
            f"order {order} exceeds the cost guard"
            + ("" if order > MAX_ORDER else "; pass allow_high_order to proceed")
        )
    tensor = predict_tensor(model.lam, model.M, order, grid)
    flagged = bound_flags(tensor)
    if flagged:
        log.warning("%d predicted order-%d entries exceed |C| = 1", flagged, order)
    return tensor


def bound_flags(tensor: CorrTensor, tol: float = BOUND_TOL) -> int:
    return int(np.count_nonzero(np.abs(tensor.values) > 1 + tol))


def class_lookup(gaps: np.ndarray, count: int) -> np.ndarray:
    """Translation-class index of gap tuples (``-1`` where they leave the grid)."""
    gaps = np.atleast_2d(np.asarray(gaps, dtype=np.int64))
    rel = np.cumsum(gaps, axis=1)
    ok = rel[:, -1] < count
    out = np.full(len(gaps), -1, dtype=np.int64)
    if np.any(ok):
        out[ok] = simplex_rank(rel[ok], count)
    return out


def reversal_asymmetry(tensor: CorrTensor) -> float:
    """Largest change of a class average under ``(g1, ..., g_k) -> (g_k, ..., g1)``."""
    gaps, mean, _ = tensor.gap_averaged()
    partner = class_lookup(gaps[:, ::-1], tensor.grid.count)
    return float(np.max(np.abs(mean - mean[partner])))


@dataclass(frozen=True)
class Projection:
    """Slice ``C(g1, g2 | fixed gaps)`` over gap indices ``g1, g2`` (NaN off the grid)."""

    order: int
    fixed: tuple[int, ...]
    predicted: np.ndarray
    measured: np.ndarray | None

    @property
    def name(self) -> str:
        return f"proj_n{self.order}_fix{'-'.join(str(g) for g in self.fixed)}"


def projection(tensor: CorrTensor, fixed: tuple[int, ...]) -> np.ndarray:
    """Class-averaged slice of ``tensor`` with gaps ``3..n-1`` pinned to ``fixed`` (in grid steps)."""
    n = tensor.order
    if n < 4 or len(fixed) != n - 3:
        raise ValidationError(f"order {n} needs {n - 3} fixed gaps")
    count = tensor.grid.count
    g1, g2 = np.meshgrid(np.arange(count), np.arange(count), indexing="ij")
    gaps = np.column_stack([g1.ravel(), g2.ravel()] + [np.full(g1.size, g) for g in fixed])
    cls = class_lookup(gaps, count)
    _, mean, _ = tensor.gap_averaged()
    out = np.where(cls >= 0, mean[np.maximum(cls, 0)], np.nan)
    return out.reshape(count, count)


@dataclass(eq=False)
class Report:
    """Scores of a model against measured tensors, ready to serialise."""

    deviations: dict[int, Deviation]
    reversal: dict[int, float]
    bounds: dict[int, int]
    projections: list[Projection]
    label: str | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "orders": {
                str(n): {
                    "mean": d.mean,
                    "max": d.max,
                    "excluded": d.excluded,
                    "reversal_asymmetry": self.reversal[n],
                    "bound_flags": self.bounds[n],
                }
                for n, d in sorted(self.deviations.items())
            },
            "projections": [p.name for p in self.projections],
            "config": self.config,
        }

    def render_text(self) -> str:
        lines = [f"{'order':>5} {'mean eps':>12} {'max eps':>12} {'excluded':>9} {'rev asym':>10} {'|C|>1':>6}"]
        for n, d in sorted(self.deviations.items()):
            lines.append(
                f"{n:>5} {d.mean:>12.4e} {d.max:>12.4e} {d.excluded:>9d} {self.reversal[n]:>10.2e} {self.bounds[n]:>6d}"
            )
        if self.label:
            lines.insert(0, self.label)
        return "\n".join(lines) + "\n"

    def write(self, outdir: str | Path) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1))
        (out / "report.txt").write_text(self.render_text())
        for p in self.projections:
            np.savetxt(out / f"{p.name}.csv", p.predicted, delimiter=",", fmt="%.17g")
            if p.measured is not None:
                np.savetxt(out / f"{p.name}_measured.csv", p.measured, delimiter=",", fmt="%.17g")


def validation_report(
    model: ReconstructedModel,
    measured: list[CorrTensor],
    *,
    fixed_gaps: tuple[tuple[int, ...], ...] = ((0,), (0, 0, 0)),
    label: str | None = None,
    config: dict | None = None,
) -> Report:
    """Score ``model`` against each measured tensor.

    Args:
        fixed_gaps: gap values (grid steps) pinned for the projection slices,
            one tuple per slice; a tuple of length ``n - 3`` applies to order ``n``.
    """
    if not measured:
        raise ValidationError("need at least one measured tensor")
    grid = measured[0].grid
    if any(t.grid != grid for t in measured):
        raise DimensionMismatch("measured tensors live on incompatible grids")
    deviations, reversal, bounds, projections = {}, {}, {}, []
    for target in sorted(measured, key=lambda t: t.order):
        n = target.order
        pred = predict(model, n, grid, allow_high_order=True)
        deviations[n] = epsilon_metric(target, pred)
        reversal[n] = reversal_asymmetry(pred)
        bounds[n] = bound_flags(pred)
        for fixed in fixed_gaps:
            if len(fixed) == n - 3:
                projections.append(Projection(n, tuple(fixed), projection(pred, fixed), projection(target, fixed)))
    return Report(deviations, reversal, bounds, projections, label, dict(config or {}))


def render_error_table(reports: list[Report], orders: tuple[int, ...] = (2, 4, 6)) -> str:
    """Rows of mean relative deviation in percent, one per labelled report."""
    width = max([len(r.label or "") for r in reports] + [9])
    head = f"{'':>{width}} | " + " ".join(f"{'C' + str(n):>7}" for n in orders)
    lines = [head, "-" * len(head)]
    for r in reports:
        cells = []
        for n in orders:
            d = r.deviations.get(n)
            cells.append(f"{100 * d.mean:>6.1f}%" if d is not None else f"{'-':>7}")
        lines.append(f"{r.label or '':>{width}} | " + " ".join(cells))
    return "\n".join(lines) + "\n"

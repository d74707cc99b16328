from __future__ import annotations

import numpy as np
import pytest

from cmpstomo.correlations import Grid1D, estimate_correlator, raw_phase_average
from cmpstomo.errors import ValidationError
from cmpstomo.shots import PhaseFieldModel, gaussian_two_point, sample_shots


def test_zero_model_gives_zero_shots():
    ens = sample_shots(PhaseFieldModel(sigma2=0.0), Grid1D(0, 1, 8), 5)
    assert np.all(ens.shots == 0)


def test_pure_global_phase_gives_unit_even_correlators():
    ens = sample_shots(PhaseFieldModel(sigma2=0.0, global_phase_spread=2.0, seed=4), Grid1D(0, 1, 6), 40)
    assert np.all(ens.shots == ens.shots[:, :1])
    for n in (2, 4):
        assert np.all(estimate_correlator(ens, n).values == 1.0)


def test_reproducible():
    model = PhaseFieldModel(seed=11)
    a = sample_shots(model, Grid1D(0, 1, 10), 20)
    b = sample_shots(model, Grid1D(0, 1, 10), 20)
    assert np.array_equal(a.shots, b.shots)


def test_two_point_matches_gaussian_moment():
    grid = Grid1D(0, 2, 8)
    model = PhaseFieldModel(sigma2=0.25, xi=10.0, seed=5)
    est = estimate_correlator(sample_shots(model, grid, 10_000), 2)
    exact = gaussian_two_point(model, grid)
    idx = est.indices()
    z = (est.values - exact[idx[:, 0], idx[:, 1]]) / np.maximum(est.std_err, 1e-300)
    off = idx[:, 0] != idx[:, 1]
    assert np.abs(z[off]).max() < 4.0
    # the closed form quoted for the exponential kernel
    tau = 2.0 * (idx[:, 1] - idx[:, 0])
    assert exact[idx[:, 0], idx[:, 1]] == pytest.approx(np.exp(-0.25 * (1 - np.exp(-tau / 10.0))))


def test_stationarity():
    grid = Grid1D(0, 1, 10)
    est = estimate_correlator(sample_shots(PhaseFieldModel(seed=6), grid, 10_000), 2)
    idx = est.indices()
    for lag in (1, 3):
        sel = idx[:, 1] - idx[:, 0] == lag
        vals, errs = est.values[sel], est.std_err[sel]
        chi2 = np.sum(((vals - vals.mean()) / errs) ** 2)
        # positively correlated entries make this conservative
        assert chi2 < 3 * (sel.sum() - 1) + 10


def test_global_spread_shares_field_stream():
    grid = Grid1D(0, 1, 6)
    a = sample_shots(PhaseFieldModel(seed=9), grid, 500)
    b = sample_shots(PhaseFieldModel(seed=9, global_phase_spread=5.0), grid, 500)
    offsets = b.shots - a.shots
    assert np.allclose(offsets, offsets[:, :1])
    for n in (2, 4):
        assert np.abs(estimate_correlator(a, n).values - estimate_correlator(b, n).values).max() < 1e-12
    ra = abs(raw_phase_average(a, [0, 2, 4]))
    rb = abs(raw_phase_average(b, [0, 2, 4]))
    assert rb / ra < 0.2


def test_matrix_kernel_and_config(tmp_path):
    grid = Grid1D(0, 1, 3)
    cov = np.diag([0.1, 0.2, 0.3])
    ens = sample_shots(PhaseFieldModel(kernel="matrix", matrix=cov), grid, 4)
    assert ens.shots.shape == (4, 3)
    with pytest.raises(ValidationError):
        sample_shots(PhaseFieldModel(kernel="matrix", matrix=-np.eye(3)), grid, 2)
    with pytest.raises(ValidationError):
        PhaseFieldModel.from_config({"sigma2": 1, "typo": 2})
    path = tmp_path / "m.json"
    import json

    path.write_text(json.dumps(PhaseFieldModel(xi=3.0).to_config()))
    assert PhaseFieldModel.load(path).xi == 3.0

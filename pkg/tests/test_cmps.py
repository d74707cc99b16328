from __future__ import annotations

import numpy as np
import pytest

from cmpstomo.cmps import (
    CmpsState,
    ExactModel,
    build_transfer_matrix,
    chain_values,
    eval_correlator_diagonal,
    eval_correlator_direct,
    generate_state,
    half_power_factors,
    is_normalized,
    m_in_diagonal_basis,
    normalize,
    order_eigenvalues,
    random_state,
    spectral_decompose,
)
from cmpstomo.errors import (
    DegenerateSpectrum,
    DimensionMismatch,
    GenerationFailed,
    IllConditionedBasis,
    NoPrincipalRoot,
    NotNormalized,
    SingularR,
    ValidationError,
)

from conftest import real_state


def brute_kron(A, B):
    """Element-wise Kronecker product, written out index by index."""
    n, m = A.shape[0], B.shape[0]
    out = np.zeros((n * m, n * m), dtype=complex)
    for i in range(n):
        for j in range(m):
            for k in range(n):
                for l in range(m):
                    out[i * m + j, k * m + l] = A[i, k] * B[j, l]
    return out


def scalar_state(q, r):
    return CmpsState([[q]], [[r]])


class TestTransferMatrix:
    def test_anti_hermitian_scalar_cancels(self):
        assert build_transfer_matrix(scalar_state(1j, 0)) == pytest.approx(np.zeros((1, 1)))

    def test_normalized_scalar(self):
        assert np.abs(build_transfer_matrix(scalar_state(-0.5, 1))).max() == 0.0

    def test_matches_brute_force_kronecker(self):
        rng = np.random.default_rng(7)
        st = random_state(2, rng)
        eye = np.eye(2)
        T = brute_kron(st.Q.conj(), eye) + brute_kron(eye, st.Q) + brute_kron(st.R.conj(), st.R)
        assert np.abs(build_transfer_matrix(st) - T).max() < 1e-14

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            CmpsState(np.eye(2), np.eye(3))


class TestNormalize:
    def test_scalar(self):
        st = normalize(scalar_state(0, 1))
        assert st.Q[0, 0] == pytest.approx(-0.5)
        assert build_transfer_matrix(st)[0, 0] == pytest.approx(0)

    def test_already_normalized_is_unchanged(self):
        st = scalar_state(-0.5, 1)
        assert normalize(st) is st

    @pytest.mark.parametrize("seed", range(5))
    def test_random_d2(self, seed):
        st = normalize(random_state(2, np.random.default_rng(seed)))
        lam = np.linalg.eigvals(build_transfer_matrix(st))
        assert abs(lam.real.max()) < 1e-12
        assert is_normalized(st)

    def test_degenerate_dominant(self):
        with pytest.raises(DegenerateSpectrum):
            normalize(CmpsState(np.zeros((2, 2)), np.zeros((2, 2))))


class TestSpectrum:
    def test_scalar(self):
        sp = spectral_decompose(scalar_state(-0.5, 1))
        assert sp.eigenvalues == pytest.approx([0])

    @pytest.mark.parametrize("seed", range(5))
    def test_invariants(self, seed):
        st = generate_state(2, seed)
        T = build_transfer_matrix(st)
        sp = spectral_decompose(st)
        scale = np.linalg.norm(T)
        assert np.linalg.norm(T @ sp.X - sp.X * sp.eigenvalues) < 1e-10 * scale
        assert np.abs(sp.Xinv @ sp.X - np.eye(4)).max() < 1e-10
        assert abs(sp.eigenvalues.sum() - np.trace(T)) < 1e-10 * max(1, scale)
        assert np.all(np.diff(sp.eigenvalues.real) <= 1e-9 * max(1, np.abs(sp.eigenvalues).max()))
        assert sp.normalized and np.all(sp.eigenvalues[1:].real < 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_real_state_has_conjugate_pairs(self, seed):
        lam = spectral_decompose(real_state(2, seed)).eigenvalues
        assert np.sort_complex(lam) == pytest.approx(np.sort_complex(lam.conj()), abs=1e-10)

    def test_ordering_tiebreak(self):
        lam = np.array([-1 - 2j, 0, -1 + 2j, -3])
        assert list(lam[order_eigenvalues(lam)]) == [0, -1 + 2j, -1 - 2j, -3]

    def test_defective_transfer_matrix_refused(self):
        # T is a Jordan block when Q is nilpotent and R = 0
        st = CmpsState([[0, 1], [0, 0]], np.zeros((2, 2)))
        with pytest.raises(IllConditionedBasis):
            spectral_decompose(st)


class TestResidues:
    def test_scalar_r(self):
        for r in (1.0, 4.0):
            st = normalize(scalar_state(0, r))
            res = m_in_diagonal_basis(st, spectral_decompose(st))
            assert res.M == pytest.approx(np.eye(1))
            assert res.Minv == pytest.approx(np.eye(1))

    def test_minv_is_inverse_half_powers(self, state2):
        sp = spectral_decompose(state2)
        res = m_in_diagonal_basis(state2, sp)
        assert np.abs(res.M @ res.Minv - np.eye(4)).max() < 1e-10
        _, Ainv = half_power_factors(state2.R)
        assert np.abs(res.Minv - sp.Xinv @ Ainv @ sp.X).max() < 1e-9

    def test_two_point_residues_sum_to_one(self, state2):
        res = ExactModel.from_state(state2).residues
        assert res.two_point_residues().sum() == pytest.approx(1.0, abs=1e-8)

    def test_rho_matches_chain(self, state2):
        ex = ExactModel.from_state(state2)
        rho = ex.residues.rho(4)
        lam = ex.spectrum.eigenvalues
        gaps = np.array([0.2, 0.5, 0.1])
        series = np.einsum("abc,a,b,c->", rho, *[np.exp(lam * g) for g in gaps])
        assert series == pytest.approx(chain_values(ex.residues.M, ex.residues.Minv, lam, gaps[None])[0], rel=1e-12)

    def test_gauge_invariance_of_rho(self, state2):
        ex = ExactModel.from_state(state2)
        rng = np.random.default_rng(3)
        D = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        M2 = 2.7 * (D[:, None] * ex.residues.M / D[None, :])
        from cmpstomo.cmps import ResidueTensor

        res2 = ResidueTensor(M2, np.linalg.inv(M2))
        for n in (2, 4, 6):
            assert np.abs(res2.rho(n) - ex.residues.rho(n)).max() < 1e-10

    def test_negative_eigenvalue_of_r(self):
        st = CmpsState(-np.eye(2), np.diag([1.0, -1.0]))
        with pytest.raises(NoPrincipalRoot):
            half_power_factors(st.R)

    def test_singular_r(self):
        with pytest.raises(SingularR):
            half_power_factors(np.diag([1.0, 0.0]))


class TestEvaluators:
    def test_scalar_state_is_constant(self):
        st = scalar_state(-0.5, 1)
        for tau in (0.0, 0.3, 7.0):
            assert eval_correlator_direct(st, [0, tau]) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(4))
    def test_coincident_points_give_one(self, seed):
        st = generate_state(2, seed)
        assert eval_correlator_direct(st, [1.3, 1.3]) == pytest.approx(1.0, abs=1e-9)
        ex = ExactModel.from_state(st)
        assert eval_correlator_diagonal(ex.residues, ex.spectrum, [0, 0, 0, 0, 0]) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("n", [2, 4, 6])
    def test_direct_matches_diagonal(self, state2, n):
        ex = ExactModel.from_state(state2)
        rng = np.random.default_rng(n)
        for _ in range(5):
            gaps = rng.exponential(0.4, n - 1)
            x = np.concatenate([[0.0], np.cumsum(gaps)])
            direct = eval_correlator_direct(state2, x)
            diag = eval_correlator_diagonal(ex.residues, ex.spectrum, gaps)
            assert abs(direct - diag) / max(abs(direct), 1e-12) < 1e-9

    def test_imaginary_parts_agree(self, state2):
        ex = ExactModel.from_state(state2)
        gaps = [0.1, 0.7, 0.2]
        d_re, d_im = eval_correlator_direct(state2, np.cumsum([0.0, *gaps]), return_imag=True)
        g_re, g_im = eval_correlator_diagonal(ex.residues, ex.spectrum, gaps, return_imag=True)
        assert d_im == pytest.approx(g_im, abs=1e-10)

    def test_real_m_with_paired_spectrum_is_real(self):
        lam = np.array([0, -1 + 2j, -1 - 2j, -3])
        # M real in a basis whose conjugate modes are swapped by a permutation P: M must commute with P
        P = np.eye(4)[[0, 2, 1, 3]]
        A = np.random.default_rng(1).standard_normal((4, 4))
        M = A + P @ A @ P + 4 * np.eye(4)
        v = chain_values(M, np.linalg.inv(M), lam, np.array([[0.3, 0.2, 0.9]]))
        assert abs(v[0].imag) < 1e-9

    def test_decay_rate_matches_gap(self):
        st = generate_state(2, 4)
        ex = ExactModel.from_state(st)
        tau = np.linspace(2, 6, 40)
        c = np.array([eval_correlator_diagonal(ex.residues, ex.spectrum, [t]) for t in tau])
        plateau = ex.residues.two_point_residues()[0].real
        slope = np.polyfit(tau, np.log(np.abs(c - plateau)), 1)[0]
        assert slope == pytest.approx(-ex.spectrum.gap, rel=0.05)

    def test_errors(self, state2):
        with pytest.raises(ValidationError):
            eval_correlator_direct(state2, [1.0, 0.5])
        with pytest.raises(ValidationError):
            eval_correlator_direct(state2, [0, 1, 2])
        with pytest.raises(NotNormalized):
            eval_correlator_direct(CmpsState(np.eye(2), np.eye(2) * 2), [0, 1])
        ex = ExactModel.from_state(state2)
        with pytest.raises(ValidationError):
            eval_correlator_diagonal(ex.residues, ex.spectrum, [-0.1])


class TestSerialization:
    def test_json_round_trip_is_exact(self, tmp_path, state2):
        path = tmp_path / "s.json"
        state2.save(path)
        back = CmpsState.load(path)
        assert np.array_equal(back.Q, state2.Q) and np.array_equal(back.R, state2.R)

    def test_generator_budget(self):
        with pytest.raises(GenerationFailed):
            generate_state(2, 0, min_gap=1e6, max_tries=3)

    def test_generator_d1_is_constant(self):
        st = generate_state(1, 5)
        assert eval_correlator_direct(st, [0, 0.4, 0.4, 2.0]) == pytest.approx(1.0)

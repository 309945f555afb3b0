import math

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from conftest import all_rhats, small_built
from saddlevar import spectra
from saddlevar.covariance import ObsOperator
from saddlevar.lprecond import L0, LM, exact_L
from saddlevar.models import HeatModel, Lorenz96Model
from saddlevar.saddle_ops import PreconditionerSpec, SaddleProblem, make_dhat
from saddlevar.spectra import (IntervalUnion, SpectralSummary, applicable_upper_bound,
                               count_unit, lt_l_bounds, preconditioned_model_spectrum,
                               prop45_upper_bound, propS4_closed_form, propS5_bound,
                               reduced_A_mu, reduced_size, remark_bound, schur_ratio_extremes,
                               theorem31_intervals, unit_eigenvalue_count)


def heat_pair(s, N, k, steps=10):
    blocks = HeatModel(s, steps=steps).window(N)
    return exact_L(blocks), LM(blocks, k), blocks


def mu_max(blocks):
    return float(np.abs(np.linalg.eigvalsh(blocks[0].dense())).max())


# -- inclusion intervals ---------------------------------------------------------------------


def test_intervals_collapse_for_unit_summary():
    iv = theorem31_intervals(SpectralSummary(*([1.0] * 8), kappa_D=1.0))
    r5 = math.sqrt(5)
    np.testing.assert_allclose(iv.negative, [(1 - r5) / 2] * 2)
    np.testing.assert_allclose(iv.middle, [1, 1])
    np.testing.assert_allclose(iv.positive, [(1 + r5) / 2] * 2)


def test_intervals_ordered_and_middle():
    sm = SpectralSummary(0.2, 1.5, 0.3, 2.0, 1.0, 3.0, 0.5, 4.0, kappa_D=7.0)
    iv = theorem31_intervals(sm)
    assert iv.negative[0] <= iv.negative[1] < 0 < iv.middle[0] <= iv.middle[1]
    assert iv.middle == (0.2, 2.0)
    assert iv.middle[1] <= iv.positive[1]


def test_summary_validation():
    with pytest.raises(ValueError):
        SpectralSummary(2.0, 1.0, 1, 1, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        SpectralSummary(0.0, 1.0, 1, 1, 1, 1, 1, 1, 1)


def test_interval_union_contains():
    iv = IntervalUnion((-2, -1), (0.5, 1), (2, 3))
    assert iv.contains([-1.5, 0.7, 2.5, 0.0, 1.5]).tolist() == [True, True, True, False, False]


@pytest.mark.parametrize("seed", [0, 1])
def test_containment_small_identity_D(seed):
    b = small_built(s=20, p=10, N=3, seed=seed, D="identity")
    pb = b.problem
    dhat = make_dhat(pb.D)
    for lh in (L0(20, 3), LM(b.blocks, 3), exact_L(b.blocks)):
        for rh in all_rhats(b):
            spec = PreconditionerSpec(pb, "PD", lh, rh, dhat)
            ev = spectra.preconditioned_saddle_eigenvalues(spec)
            iv = theorem31_intervals(spectra.spectral_summary(spec))
            assert np.all(iv.contains(ev, 1e-8))
            assert iv.negative[0] < ev[0] and iv.positive[1] > ev[-1]


def test_saddle_eigenvalues_need_PD():
    b = small_built()
    spec = PreconditionerSpec(b.problem, "PI", L0(8, 3), all_rhats(b)[0])
    with pytest.raises(ValueError):
        spectra.preconditioned_saddle_eigenvalues(spec)


def test_schur_ratio_examples():
    b = small_built(s=10, p=4, N=2)
    pb = b.problem
    lam_S, Lam_S, lam_L, Lam_L = schur_ratio_extremes(pb, exact_L(b.blocks))
    assert lam_L == pytest.approx(1.0) and Lam_L == pytest.approx(1.0)
    assert lam_S >= 1 - 1e-10
    H0 = ObsOperator(sps.csr_matrix((4, 10)), pb.H.columns, pb.H.smoothed)
    pb0 = SaddleProblem(pb.D, pb.R, H0, pb.L)
    lam_S, Lam_S, _, _ = schur_ratio_extremes(pb0, L0(10, 2))
    assert lam_S == pytest.approx(1.0) and Lam_S == pytest.approx(1.0)
    with pytest.raises(ValueError):
        schur_ratio_extremes(pb, L0(10, 2), dense_threshold=10)


# -- unit counts and scalar bounds ------------------------------------------------------------------


def test_unit_count_examples():
    assert unit_eigenvalue_count(3, 3, 500) == 1000
    assert unit_eigenvalue_count(5, 3, 500) == 2000
    assert unit_eigenvalue_count(6, 7, 10) == 70
    with pytest.raises(ValueError):
        unit_eigenvalue_count(3, 1, 10)
    with pytest.raises(ValueError):
        unit_eigenvalue_count(3, 5, 10)


def test_scalar_bounds():
    assert prop45_upper_bound(3) == pytest.approx(7.4641, abs=5e-5)
    assert remark_bound(4) == 7.0
    assert propS5_bound() == pytest.approx(7.8284, abs=5e-5)
    with pytest.raises(ValueError):
        prop45_upper_bound(0)
    with pytest.raises(ValueError):
        remark_bound(0)


def test_applicable_bound_columns():
    # k = 3: closed form for N+1 in 4..6, general bound from 7
    # the tabulated 4.7910 truncates 1 + (3 + sqrt 21) / 2 = 4.79129
    for nb in (4, 5, 6):
        assert applicable_upper_bound(nb - 1, 3) == pytest.approx(4.7910, abs=5e-4)
    assert applicable_upper_bound(6, 3) == pytest.approx(7.4641, abs=5e-5)
    # k = 4: remark bound for N+1 in 5..8, 5 + sqrt 8 for 9..12, general bound after
    assert applicable_upper_bound(5, 4) == 7.0
    assert applicable_upper_bound(9, 4) == pytest.approx(7.8284, abs=5e-5)
    assert applicable_upper_bound(12, 4) == pytest.approx(9.0)


# -- closed form and reduced matrix ------------------------------------------------------------------


def test_closed_form_limits():
    assert propS4_closed_form(0.0) == (1.0, 1.0)
    lo, hi = propS4_closed_form(1.0)
    assert hi == pytest.approx(1 + (3 + math.sqrt(21)) / 2)
    assert round(hi, 3) == 4.791 and round(lo, 4) == 0.2087
    with pytest.raises(ValueError):
        propS4_closed_form(0.5, N=6)
    with pytest.raises(ValueError):
        propS4_closed_form(0.5, N=3, k=4)


@pytest.mark.parametrize("N", [3, 4, 5])
def test_closed_form_matches_reduced_matrix(N):
    ev = np.linalg.eigvalsh(np.eye(reduced_size(N, 3)) + reduced_A_mu(0.5, N, 3))
    lo, hi = propS4_closed_form(0.5, N, 3)
    assert np.abs(ev - lo).min() < 1e-12 and np.abs(ev - hi).min() < 1e-12


def test_reduced_matrix_explicit_k3_N3():
    mu = 0.7
    u = mu ** np.array([3, 2, 1])
    ref = np.zeros((4, 4))
    ref[:3, :3] = np.outer(u, u)
    ref[:3, 3] = ref[3, :3] = -u
    np.testing.assert_allclose(reduced_A_mu(mu, 3, 3), ref, atol=1e-15)
    with pytest.raises(ValueError):
        reduced_A_mu(mu, 3, 0)


@pytest.mark.parametrize("N,k", [(3, 2), (5, 3), (6, 3), (7, 4), (4, 5), (8, 3)])
def test_multiset_equals_reduced_union(N, k):
    L, Lm, blocks = heat_pair(12, N, k, steps=3)
    ev = preconditioned_model_spectrum(L, Lm)
    parts = []
    for mu in np.linalg.eigvalsh(blocks[0].dense()):
        e = np.linalg.eigvalsh(np.eye(reduced_size(N, k)) + reduced_A_mu(mu, N, k))
        parts += list(e) + [1.0] * (N + 1 - e.size)
    np.testing.assert_allclose(np.sort(parts), ev, atol=1e-10)


# -- preconditioned model spectrum ------------------------------------------------------------------


def test_heat_unit_count_s50():
    L, Lm, _ = heat_pair(50, 3, 3)
    ev = preconditioned_model_spectrum(L, Lm)
    assert count_unit(ev, 1e-8) >= unit_eigenvalue_count(3, 3, 50)


@pytest.mark.parametrize("nb", [4, 5, 6])
def test_heat_extremes_within_table_values(nb):
    L, Lm, _ = heat_pair(50, nb - 1, 3)
    ev = preconditioned_model_spectrum(L, Lm)
    assert ev[-1] <= 4.7910 + 1e-6 and ev[0] >= 0.2087 - 1e-3


def test_heat_extremes_approach_limit_with_s():
    his, los = [], []
    for s in (25, 50, 100):
        L, Lm, _ = heat_pair(s, 3, 3)
        ev = preconditioned_model_spectrum(L, Lm)
        his.append(ev[-1])
        los.append(ev[0])
    assert his[0] < his[1] < his[2] < 4.7910 + 1e-6
    assert los[0] > los[1] > los[2] > 0.2087 - 1e-3


def test_unpreconditioned_LtL_bounds():
    L, _, blocks = heat_pair(30, 4, 3)
    ev = preconditioned_model_spectrum(L, L0(30, 4))
    lo, hi = lt_l_bounds(mu_max(blocks))
    assert ev[0] >= lo - 1e-12 and ev[-1] <= hi + 1e-12


def test_extremes_mode_matches_dense():
    L, Lm, _ = heat_pair(40, 5, 3)
    ev = preconditioned_model_spectrum(L, Lm)
    lo, hi = preconditioned_model_spectrum(L, Lm, "extremes")
    assert lo[0] == pytest.approx(ev[0], abs=1e-7)
    assert hi[0] == pytest.approx(ev[-1], abs=1e-7)
    with pytest.raises(ValueError):
        preconditioned_model_spectrum(L, Lm, "bogus")
    with pytest.raises(ValueError):
        preconditioned_model_spectrum(L, L0(40, 4))


def test_heat_hypothesis_and_bound_hold():
    for nb in (4, 6, 9):
        L, Lm, blocks = heat_pair(30, nb - 1, 3)
        M = blocks[0].dense()
        assert np.linalg.norm(M @ M.T, 2) <= 1
        assert preconditioned_model_spectrum(L, Lm)[-1] <= prop45_upper_bound(3) + 1e-10


def test_lorenz_violates_hypothesis():
    m = Lorenz96Model(40)
    blocks, _ = m.window(m.spun_up_state(), 15)
    M = blocks[-1].dense()
    assert np.linalg.eigvalsh(M.T @ M)[-1] > 1


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 20), st.integers(1, 8), st.integers(2, 9), st.integers(1, 12))
def test_property_unit_count_lower_bound_and_upper_bound(s, N, k, steps):
    k = min(k, N + 1)
    L, Lm, _ = heat_pair(s, N, k, steps)
    ev = preconditioned_model_spectrum(L, Lm)
    assert count_unit(ev) >= unit_eigenvalue_count(N, k, s)
    assert ev[-1] <= applicable_upper_bound(N, k) + 1e-10

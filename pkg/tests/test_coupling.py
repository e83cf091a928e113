import numpy as np
import pytest
from oracles import brute_force_nonlocal

from glasscav.cavity_optics import CavityGeometry
from glasscav.coupling import (
    GROUPS,
    CouplingMatrix,
    DensityProfile,
    PhysicalParams,
    PositionGroupParams,
    SpinSite,
    assemble_J,
    collapse_rates,
    critical_pump,
    j1_fixture,
    point_source_J,
    point_source_couplings,
    sample_positions,
    site_positions,
)
from glasscav.errors import ConstraintError, NumericalRangeError

GEOM = CavityGeometry()
ISO = DensityProfile(5.3, 5.3)


@pytest.fixture(scope="module")
def J1():
    return assemble_J(j1_fixture(ISO))


def _pairwise_min(pos):
    d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    return d[np.triu_indices(len(pos), 1)].min()


# ---------------------------------------------------------------------------
# positions


@pytest.mark.parametrize("name", sorted(GROUPS))
def test_sampled_groups_satisfy_constraints(name):
    for seed in range(20):
        pos = site_positions(sample_positions(GROUPS[name], seed))
        assert len(pos) == GROUPS[name].n
        assert _pairwise_min(pos) >= 40.0
        assert np.all(np.hypot(pos[:, 0], pos[:, 1]) <= 150.0)


def test_group_a_is_perturbed_square_grid():
    pos = site_positions(sample_positions(GROUPS["A"], 7)).reshape(4, 4, 2)
    # columns share a nominal x, rows a nominal y, within the jitter widths
    dx = np.diff(pos[..., 0], axis=1)
    dy = np.diff(pos[..., 1], axis=0)
    assert np.all(np.abs(dx - 62.0) <= 6.0 + 1e-12)
    assert np.all(np.abs(dy - 62.0) <= 6.0 + 1e-12)


def test_zero_widths_give_centered_grid():
    p = PositionGroupParams(3, 2, 50.0, 60.0, 0.0, 0.0, 0.0, 0.0)
    pos = site_positions(sample_positions(p, 123))
    X, Y = np.meshgrid([-50.0, 0.0, 50.0], [-30.0, 30.0])
    assert np.array_equal(pos, np.column_stack([X.ravel(), Y.ravel()]))


def test_sampling_is_deterministic():
    a = sample_positions(GROUPS["B"], 42)
    b = sample_positions(GROUPS["B"], 42)
    assert a == b
    assert a != sample_positions(GROUPS["B"], 43)


def test_unsatisfiable_constraints_raise():
    p = PositionGroupParams(4, 4, 20.0, 20.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ConstraintError):
        sample_positions(p, 0, max_attempts=10)


def test_j1_fixture_layout():
    sites = j1_fixture()
    pos = site_positions(sites)
    assert len(sites) == 16
    assert sites[0].position == (-97.15, -93.4)
    assert np.mean(np.hypot(pos[:, 0], pos[:, 1])) == pytest.approx(93.0, abs=1.5)
    assert np.mean(np.hypot(pos[:, 0], pos[:, 1])) / 35.0 == pytest.approx(2.7, abs=0.05)


def test_density_validation():
    with pytest.raises(ValueError):
        DensityProfile(a00=0.9)
    with pytest.raises(ValueError):
        DensityProfile(sigma_x=0.0)
    DensityProfile(a00=np.sqrt(0.5), a01=np.sqrt(0.5))


# ---------------------------------------------------------------------------
# assembly


def test_single_site_local_term():
    for sigma in (3.0, 5.3, 8.0):
        Jm = assemble_J([SpinSite((0.0, 0.0), DensityProfile(sigma, sigma))])
        assert Jm.J_local[0, 0] == pytest.approx(35.0 ** 2 / (56 * np.pi * sigma ** 2), rel=1e-12)


def test_origin_point_limit():
    tiny = DensityProfile(1e-4, 1e-4)
    Jm = assemble_J([SpinSite((0.0, 0.0), tiny), SpinSite((0.0, 0.0), tiny)], check_convergence=False)
    # the family average carries 1/N relative to the closed form
    assert GEOM.N * Jm.J_nonlocal[0, 1] == pytest.approx(3 / np.pi, abs=1e-6)
    ps = point_source_couplings(np.zeros((2, 2)))
    assert ps[0, 1] == pytest.approx(3 / np.pi, abs=1e-14)
    assert ps[0, 0] == 0.0


@pytest.mark.slow
def test_j1_matches_brute_force_double_sum(J1):
    pos = site_positions(j1_fixture())
    scale = np.max(np.abs(J1.J))
    rows = (0, 5, 15)
    for i in rows:
        for j in range(16):
            bf = brute_force_nonlocal(pos[i], pos[j], (5.3, 5.3), 35.0, points=48) / GEOM.N
            assert abs(bf - J1.J_nonlocal[i, j]) < 1e-4 * scale


def test_quadrature_refinement_converged(J1):
    assert not J1.flags.any()
    assert J1.quadrature["max_refinement_change"] < 1e-4 * np.max(np.abs(J1.J))


def test_point_source_limit_is_second_order():
    p = point_source_J(j1_fixture()).J
    off = ~np.eye(16, dtype=bool)
    errs = []
    for sigma in (0.5, 0.25, 0.125):
        a = assemble_J(j1_fixture(DensityProfile(sigma, sigma)), check_convergence=False)
        errs.append(np.max(np.abs(GEOM.N * a.J_nonlocal - p)[off]))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4.0) < 0.3)
    assert errs[-1] / (0.125 / 35.0) ** 2 < 1e3


def test_point_source_zero_diagonal_and_symmetric():
    sites = sample_positions(GROUPS["C"], 3)
    Jm = point_source_J(sites)
    assert np.all(np.diag(Jm.J) == 0)
    assert np.array_equal(Jm.J, Jm.J.T)


def test_J_symmetric_and_sorted(J1):
    assert np.array_equal(J1.J, J1.J.T)
    assert np.all(np.diff(J1.eigvals) <= 0)
    assert np.allclose(J1.eigvecs.T @ J1.eigvecs, np.eye(16), atol=1e-12)


def test_permutation_equivariance(J1):
    perm = np.random.default_rng(0).permutation(16)
    sites = j1_fixture(ISO)
    Jp = assemble_J([sites[k] for k in perm])
    assert np.max(np.abs(Jp.J - J1.J[np.ix_(perm, perm)])) < 1e-12 * np.max(np.abs(J1.J))


def test_rotation_invariance(J1):
    pos = site_positions(j1_fixture())
    for ang in (0.3, 1.9):
        R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        Jr = assemble_J([SpinSite(tuple(R @ p), ISO) for p in pos])
        assert np.max(np.abs(Jr.J - J1.J)) < 1e-8 * np.max(np.abs(J1.J))


@pytest.mark.parametrize("name", ["A", "C"])
def test_full_J_positive_semidefinite(name):
    for seed in range(3):
        Jm = assemble_J(sample_positions(GROUPS[name], seed))
        assert Jm.eigvals[-1] >= -1e-8 * Jm.eigvals[0]


def test_split_density_is_supported():
    split = DensityProfile(5.2, 5.4, a00=np.sqrt(0.5), a01=np.sqrt(0.5))
    sites = j1_fixture()
    sites[3] = SpinSite(sites[3].position, split)
    Jm = assemble_J(sites)
    assert np.array_equal(Jm.J, Jm.J.T)
    assert not Jm.flags.any()
    # the odd HG component has no self-overlap with the even one
    one = assemble_J([SpinSite((10.0, 5.0), DensityProfile(5.0, 5.0, a00=0.0, a01=1.0))])
    assert one.J_local[0, 0] == pytest.approx(35.0 ** 2 / 14 / (4 * np.pi * 25.0), rel=1e-12)


def test_coupling_matrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        CouplingMatrix(np.array([[1.0, 0.2], [0.1, 1.0]]), [], GEOM, False)


# ---------------------------------------------------------------------------
# threshold and dissipation


def test_critical_pump_scalings(J1):
    phys = PhysicalParams()
    base = critical_pump(J1, phys)
    assert critical_pump(J1, PhysicalParams(N_A=2 * phys.N_A)) == pytest.approx(base / 2, rel=1e-14)
    k0 = [critical_pump(J1, PhysicalParams(kappa=1e-6, Delta_C=-2 * np.pi * d)) for d in (10e6, 20e6)]
    assert k0[1] / k0[0] == pytest.approx(2.0, rel=1e-12)


def test_critical_pump_regression_baseline(J1):
    assert J1.lambda_max == pytest.approx(0.4000002062107012, rel=1e-9)
    assert critical_pump(J1, PhysicalParams.preset("main_text")) == pytest.approx(1.0848813941033068e18, rel=1e-9)


def test_critical_pump_requires_positive_lambda():
    Jm = CouplingMatrix(-np.eye(2), [], GEOM, False)
    with pytest.raises(NumericalRangeError):
        critical_pump(Jm, PhysicalParams())


def test_collapse_rates(J1):
    phys = PhysicalParams()
    zero = collapse_rates(J1, phys, 0.0)
    assert np.all(zero.coefficients == 0)
    one = collapse_rates(J1, phys, 1.3e5)
    two = collapse_rates(J1, phys, 2.6e5)
    assert np.allclose(two.coefficients, 2 * one.coefficients, rtol=1e-14)
    assert len(one) == 16
    assert one.per_spin_rate / (2 * np.pi) == pytest.approx(3e6, rel=0.1)


def test_collapse_rates_reject_indefinite():
    Jm = CouplingMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), [], GEOM, False)
    with pytest.raises(NumericalRangeError):
        collapse_rates(Jm, PhysicalParams(), 1.0)


def test_physical_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(Delta_A=1.0)
    with pytest.raises(ValueError):
        PhysicalParams(kappa=0.0)
    with pytest.raises(KeyError):
        PhysicalParams.preset("nope")

"""Companion matrices, generalized spectra and relaxation bounds.

The 1D chain gives exact extreme generalized eigenvalues (1, 2): the
zones carry twice the conductivity, so their condensed fine operators
are exactly twice the global ones, while outside the zones fine equals
global.  Everything else is cross-checked against an independent
generalized-eigenvalue route and the scalar map 1 - omega * alpha.
"""

import numpy as np
import pytest
import scipy.linalg as sla

from glocal import (
    build_companion,
    certify_paracontraction,
    characteristic_value,
    compute_residual,
    generalized_alphas,
    generalized_spectrum,
    relaxation_bounds,
    spectral_radius,
)


def embedded_sum(scn):
    return sum(scn.fine_schur_embedded[sid] for sid in scn.subdomain_ids)


def full_partition(scn, max_delay):
    return [list(scn.subdomain_ids)] + [[] for _ in range(max_delay)]


# ---------------------------------------------------------------------------
# bounds


def test_relaxation_bounds_frozen():
    b0 = relaxation_bounds(1.0, 1.0, 0)
    assert b0.omega_sync == 2.0
    assert b0.epsilon is None and b0.omega_async_factor is None
    b1 = relaxation_bounds(1.0, 1.0, 1)
    assert b1.epsilon == 0.5
    assert np.isclose(b1.omega_async_factor, 2.0 / 9.0, atol=1e-15)
    b2 = relaxation_bounds(1.0, 1.0, 2)
    # sin(pi/6) lands a hair under 0.5 in floating point.
    assert np.isclose(b2.epsilon, 0.5, rtol=1e-12)
    assert np.isclose(b2.omega_async_factor, 4.0 / 81.0, rtol=1e-12)
    b3 = relaxation_bounds(1.0, 1.0, 3)
    assert np.isclose(b3.epsilon, 0.3420201433256687, atol=1e-15)
    scaled = relaxation_bounds(0.5, 4.0, 0)
    assert scaled.omega_sync == 0.5


def test_relaxation_bounds_validation():
    with pytest.raises(ValueError):
        relaxation_bounds(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        relaxation_bounds(2.0, 1.0, 1)
    with pytest.raises(ValueError):
        relaxation_bounds(1.0, 1.0, -1)


# ---------------------------------------------------------------------------
# generalized spectrum


def test_chain_alphas_frozen(chain):
    alpha_min, alpha_max = generalized_alphas(chain)
    assert np.isclose(alpha_min, 1.0, atol=1e-10)
    assert np.isclose(alpha_max, 2.0, atol=1e-10)


def test_spectrum_matches_generalized_eig_oracle(two_patch_thermal):
    scn = two_patch_thermal
    spectrum = generalized_spectrum(scn)
    vals = sla.eig(embedded_sum(scn), scn.schur_global, right=False)
    assert np.abs(vals.imag).max() < 1e-10
    assert np.allclose(np.sort(vals.real), spectrum, atol=1e-8)
    assert spectrum[0] > 0
    amin, amax = generalized_alphas(scn)
    assert (amin, amax) == (spectrum[0], spectrum[-1])


# ---------------------------------------------------------------------------
# companion construction


def test_undelayed_companion_is_the_scalar_map(chain, two_patch_thermal):
    for scn in (chain, two_patch_thermal):
        spectrum = generalized_spectrum(scn)
        for omega in (0.3, 1.0, 1.7 / spectrum[-1]):
            system = build_companion(scn, full_partition(scn, 0), omega, 0)
            assert np.isclose(spectral_radius(system),
                              np.abs(1.0 - omega * spectrum).max(),
                              atol=1e-9)


def test_synchronous_bound_is_sharp(two_patch_thermal):
    scn = two_patch_thermal
    _, amax = generalized_alphas(scn)
    below = build_companion(scn, full_partition(scn, 0), 0.99 * 2 / amax, 0)
    above = build_companion(scn, full_partition(scn, 0), 1.01 * 2 / amax, 0)
    assert spectral_radius(below) < 1.0
    assert spectral_radius(above) > 1.0


def test_companion_layout(chain):
    scn = chain
    n = scn.gamma_dim
    omega = 0.4
    partition = [[0, 1], [], [2]]
    system = build_companion(scn, partition, omega, 2)
    m = system.matrix
    assert m.shape == (3 * n, 3 * n)
    assert np.allclose(m[:n, :n], np.eye(n) - omega * system.blocks[0])
    for k in (1, 2):
        assert np.allclose(m[:n, k * n:(k + 1) * n],
                           -omega * system.blocks[k])
    assert np.allclose(m[n:2 * n, :n], np.eye(n))
    assert np.allclose(m[2 * n:, n:2 * n], np.eye(n))
    assert np.allclose(m[n:2 * n, n:], 0.0)
    assert np.allclose(m[2 * n:, 2 * n:], 0.0)
    assert np.allclose(m[2 * n:, :n], 0.0)
    # Slots repartition the same operator sum.
    total = build_companion(scn, full_partition(scn, 0), omega, 0).blocks[0]
    assert np.allclose(sum(system.blocks), total, atol=1e-12)


def test_symmetrized_companion_keeps_the_spectrum(chain):
    omega = 0.05
    partition = [[0, 1], [2]]
    plain = build_companion(chain, partition, omega, 1)
    symm = build_companion(chain, partition, omega, 1, symmetrized=True)
    for block in symm.blocks:
        assert np.allclose(block, block.T, atol=1e-10)
    ev_plain = np.sort_complex(np.linalg.eigvals(plain.matrix))
    ev_symm = np.sort_complex(np.linalg.eigvals(symm.matrix))
    assert np.allclose(ev_plain, ev_symm, atol=1e-8)


def test_fixed_point_self_check(chain):
    scn = chain
    p_hat = -scn.schur_global @ np.linalg.solve(embedded_sum(scn), scn.offset)
    # p_hat really is the coupled load: the residual vanishes there.
    r = compute_residual(scn, scn.solve_interface(p_hat))
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(scn.rhs_global)
    for symmetrized in (False, True):
        build_companion(scn, [[0, 1], [2]], 0.1, 1,
                        symmetrized=symmetrized, p_hat=p_hat)
    with pytest.raises(ValueError):
        build_companion(scn, [[0, 1], [2]], 0.1, 1, p_hat=p_hat + 1.0)


def test_characteristic_value_vanishes_at_eigenvalues(chain):
    system = build_companion(chain, [[0, 1], [2]], 0.2, 1)
    eigvals = np.linalg.eigvals(system.matrix)
    probe = abs(characteristic_value(system, 1.37 + 0.21j))
    assert probe > 0
    for lam in eigvals[:4]:
        assert abs(characteristic_value(system, lam)) <= 1e-8 * probe


def test_partition_validation(chain):
    with pytest.raises(ValueError):
        build_companion(chain, [[0, 1, 2]], 0.5, 1)  # missing slot
    with pytest.raises(ValueError):
        build_companion(chain, [[0, 1], [1, 2]], 0.5, 1)  # duplicate
    with pytest.raises(ValueError):
        build_companion(chain, [[0, 1], []], 0.5, 1)  # patch 2 missing
    with pytest.raises(ValueError):
        build_companion(chain, [[0, 1, 2]], 0.0, 0)
    with pytest.raises(ValueError):
        build_companion(chain, [[0, 1, 2]], 0.5, -1)


# ---------------------------------------------------------------------------
# certificates


def test_certificate_passes_below_the_sufficient_bound(chain):
    amin, amax = generalized_alphas(chain)
    bounds = relaxation_bounds(amin, amax, 1)
    report = certify_paracontraction(chain, 0.9 * bounds.omega_async_factor,
                                     1, trials=20, seed=7)
    assert report.passed
    assert report.trials == 20 and len(report.rhos) == 20
    assert report.rho_max == max(report.rhos)
    assert report.rho_max < 1.0
    for partition in report.partitions:
        assert partition[0][0] == 0  # complement pinned to age zero
        flat = sorted(sid for slot in partition for sid in slot)
        assert flat == sorted(chain.subdomain_ids)
    again = certify_paracontraction(chain, 0.9 * bounds.omega_async_factor,
                                    1, trials=20, seed=7)
    assert again.rhos == report.rhos


def test_certificate_fails_past_the_synchronous_bound(chain):
    report = certify_paracontraction(chain, 1.5, 0, trials=10)
    assert not report.passed
    assert report.trials == 1 and len(report.rhos) == 1
    assert report.rho_max > 1.0


def test_certificate_validation(chain):
    with pytest.raises(ValueError):
        certify_paracontraction(chain, 0.5, 0, trials=0)
    with pytest.raises(ValueError):
        certify_paracontraction(chain, 0.5, -1)

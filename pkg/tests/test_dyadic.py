"""Spatial shell family and Fourier annulus family."""

import math

import numpy as np
import pytest

from afpde import (
    DomainError,
    GridSpec,
    ScalarField,
    apply_annulus,
    build_fourier,
    build_spatial,
    default_fourier_jmax,
    default_spatial_jmax,
    power_family,
)
from afpde.dyadic import _chi_profile, _g_profile, _h_profile


# ---------------------------------------------------------------------------
# radial profiles


def test_h_profile_levels():
    t = np.array([0.0, 0.25, 0.375, 0.5, 0.75, 1.0, 1.5, 2.0, 5.0])
    h = _h_profile(t)
    assert np.all(h[t <= 0.25] == -1.0)
    assert np.all(h[(t >= 0.5) & (t <= 1.0)] == 0.0)
    assert np.all(h[t >= 2.0] == 1.0)
    assert h[2] == pytest.approx(-0.5)  # quintic midpoint
    assert h[6] == pytest.approx(0.5)


def test_h_profile_monotone():
    t = np.linspace(0.0, 3.0, 4001)
    h = _h_profile(t)
    assert np.all(np.diff(h) >= -1e-15)


def test_g_profile_shape():
    assert _g_profile(np.array([0.0]))[0] == 1.0
    assert _g_profile(np.array([1.0]))[0] == 0.0
    assert _g_profile(np.array([-2.0]))[0] == 0.0
    mid = _g_profile(np.array([0.5]))[0]
    assert mid == pytest.approx(math.exp(-1.0 / 3.0))


# ---------------------------------------------------------------------------
# spatial shells


def test_spatial_family_validation():
    with pytest.raises(DomainError):
        build_spatial(1)
    with pytest.raises(DomainError):
        build_spatial(6, gamma=0.0)
    fam = build_spatial(4)
    with pytest.raises(DomainError):
        fam.shell_profile(5, np.array([1.0]))


def test_shell_plateau_and_support():
    fam = build_spatial(6)
    # shell 3 is identically 1 on 4 <= |x| <= 8 and vanishes outside (2, 16)
    r = np.linspace(4.0, 8.0, 101)
    assert np.all(fam.shell_profile(3, r) == 1.0)
    outside = np.array([1.9, 2.0, 16.0, 20.0])
    assert np.all(fam.shell_profile(3, outside) == 0.0)
    assert fam.shell_profile(3, np.array([6.0]))[0] == 1.0


def test_innermost_shell_covers_unit_ball():
    fam = build_spatial(4)
    r = np.linspace(0.0, 1.0, 64)
    assert np.all(fam.shell_profile(0, r) == 1.0)
    assert np.all(fam.shell_profile(0, np.array([2.0, 3.0])) == 0.0)


def test_shell_sum_band_and_overlap():
    # continuum check at random radii: 1 <= sum psi_j <= 3 and at most
    # three shells are nonzero at any point
    fam = build_spatial(8)
    rng = np.random.default_rng(2)
    r = rng.uniform(0.0, 2.0**7, 10_000)
    vals = np.stack([fam.shell_profile(j, r) for j in range(9)])
    total = vals.sum(axis=0)
    assert np.all(total >= 1.0 - 1e-12)
    assert np.all(total <= 3.0 + 1e-12)
    assert int(np.max((vals > 0).sum(axis=0))) <= 3


def test_partition_sums_to_one_on_grid():
    g = GridSpec(n=3, L=16.0, N=32)
    fam = build_spatial(default_spatial_jmax(g))
    total = sum(fam.partition(g, j) for j in range(fam.J_max + 1))
    assert np.max(np.abs(total - 1.0)) < 1e-14


def test_partition_equals_shell_inside_half_ball():
    # only psi_0 is active for |x| <= 1/2, so normalization is a no-op there
    g = GridSpec(n=3, L=8.0, N=64)
    fam = build_spatial(default_spatial_jmax(g))
    mask = g.radius() <= 0.5
    assert np.array_equal(fam.partition(g, 0)[mask], fam.shell(g, 0)[mask])
    assert np.all(fam.shell(g, 0)[mask] == 1.0)


def test_default_jmax_covers_box_corner():
    g = GridSpec(n=3, L=16.0, N=32)
    J = default_spatial_jmax(g)
    assert 2.0**J >= g.L * math.sqrt(3)
    fam = build_spatial(J)
    assert float(fam.shell_sum(g).min()) >= 1.0 - 1e-12


def test_undersized_family_rejected_on_grid():
    g = GridSpec(n=3, L=16.0, N=32)
    fam = build_spatial(3)  # last plateau ends at 8 < corner 16*sqrt(3)
    with pytest.raises(DomainError):
        fam.shell_sum(g)


def test_power_family_same_support_new_profile():
    fam = build_spatial(5)
    squared = power_family(fam, 2.0)
    r = np.linspace(0.1, 40.0, 500)
    base = fam.shell_profile(2, r)
    assert np.allclose(squared.shell_profile(2, r), base**2)
    # supports and plateaus unchanged
    assert np.array_equal(base == 0.0, squared.shell_profile(2, r) == 0.0)
    assert np.array_equal(base == 1.0, squared.shell_profile(2, r) == 1.0)
    with pytest.raises(DomainError):
        power_family(fam, -1.0)


def test_derivative_scaling_constant_across_shells():
    # measured sup |d1 psi_j| * 2^j should be j-independent (each shell is
    # a dilation of the same profile); require 5% agreement across j=2..6
    fam = build_spatial(6)
    table = fam.derivative_table()
    vals = table["per_shell"][(1, 0, 0)][2:7]
    assert max(vals) / min(vals) < 1.05
    # dilation symmetry holds order by order
    vals3 = table["per_shell"][(1, 1, 1)][2:7]
    assert max(vals3) / min(vals3) < 1.10


def test_derivative_table_is_finite_and_complete():
    fam = build_spatial(4)
    table = fam.derivative_table(n_samples=512)
    # 3 + 6 + 10 multi-indices for orders 1..3
    assert len(table["C"]) == 19
    for c in table["C"].values():
        assert np.isfinite(c) and c > 0.0


# ---------------------------------------------------------------------------
# Fourier annuli


def test_annulus_partition_of_unity_on_grid():
    g = GridSpec(n=3, L=16.0, N=32)
    fam = build_fourier(g)
    total = sum(fam.annulus(g, j) for j in range(fam.J_max + 1))
    assert np.max(np.abs(total - 1.0)) < 1e-14


def test_annulus_nonnegative_with_plateau():
    fam = build_fourier(GridSpec(n=3, L=16.0, N=64))
    s = np.linspace(0.0, 2.0**5, 20_000)
    for j in range(fam.J_max + 1):
        phi = fam.profile(j, s)
        assert np.all(phi >= -1e-15)
    # plateau of phi_2: identically 1 on [3, 4]
    plateau = np.linspace(3.0, 4.0, 101)
    assert np.all(fam.profile(2, plateau) == 1.0)
    # support of phi_2 inside (2, 6)
    outside = np.array([1.9, 2.0, 6.0, 8.0])
    assert np.all(fam.profile(2, outside) == 0.0)


def test_annulus_overlap_at_most_two():
    fam = build_fourier(GridSpec(n=3, L=16.0, N=64))
    s = np.linspace(0.0, 2.0**5, 20_000)
    active = np.stack(
        [fam.profile(j, s) > 0 for j in range(fam.J_max + 1)]
    ).sum(axis=0)
    assert int(active.max()) == 2


def test_chi_profile_values():
    t = np.array([0.0, 1.0, 1.25, 1.5, 2.0])
    chi = _chi_profile(t)
    assert chi[0] == 1.0 and chi[1] == 1.0
    assert chi[2] == pytest.approx(0.5)
    assert chi[3] == 0.0 and chi[4] == 0.0


def test_reconstruction_from_annulus_pieces():
    # the family telescopes to exactly 1 on every sampled mode, so the
    # pieces sum back to the field to roundoff
    g = GridSpec(n=3, L=8.0, N=32)
    rng = np.random.default_rng(9)
    f = ScalarField(g, rng.standard_normal(g.shape))
    fam = build_fourier(g)
    total = sum(apply_annulus(f, fam, j).values for j in range(fam.J_max + 1))
    assert np.max(np.abs(total - f.values)) < 1e-12 * np.max(np.abs(f.values))


def test_plateau_mode_passes_through_unchanged():
    g = GridSpec(n=2, L=8.0, N=64)
    X = g.coords()
    # |xi| = 3.53 sits on the plateau of phi_2 ([3, 4])
    kx = 2 * math.pi / (2 * g.L) * 8
    ky = 2 * math.pi / (2 * g.L) * 4
    assert 3.0 <= math.hypot(kx, ky) <= 4.0
    vals = np.cos(kx * X[0]) * np.cos(ky * X[1])
    f = ScalarField(g, np.ascontiguousarray(np.broadcast_to(vals, g.shape)))
    fam = build_fourier(g)
    piece = apply_annulus(f, fam, 2)
    assert np.max(np.abs(piece.values - f.values)) < 1e-13
    # and the adjacent non-overlapping annulus kills it
    dead = apply_annulus(f, fam, 4)
    assert np.max(np.abs(dead.values)) < 1e-13


def test_gaussian_shell_pieces_decay():
    # shells far outside the Gaussian core carry next to nothing
    g = GridSpec(n=3, L=16.0, N=64)
    X = g.coords()
    f = np.exp(-sum(x * x for x in X))
    fam = build_spatial(default_spatial_jmax(g))
    masses = [float(np.max(fam.shell(g, j) * f)) for j in range(fam.J_max + 1)]
    assert masses[0] == pytest.approx(1.0)
    assert masses[3] < 1e-3
    assert masses[4] < 1e-12


def test_default_fourier_jmax_reaches_corner():
    g = GridSpec(n=3, L=16.0, N=128)
    J = default_fourier_jmax(g)
    corner = math.sqrt(3) * g.nyquist
    assert 2.0**J >= corner
    assert 2.0 ** (J - 1) < corner


def test_annulus_index_range_checked():
    g = GridSpec(n=2, L=4.0, N=16)
    fam = build_fourier(g)
    with pytest.raises(DomainError):
        fam.annulus(g, fam.J_max + 1)
    # dilated lookups may exceed J_max by exactly the dilation budget
    arr = fam.annulus(g, fam.J_max + 2, scale=4.0)
    assert arr.shape == g.wavenumber_radius().shape
    with pytest.raises(DomainError):
        fam.annulus(g, fam.J_max + 3, scale=4.0)

"""Quotient probes, infimum estimates, and scalar-flattening."""

import numpy as np
import pytest

from afpde.errors import (
    ConfigurationError,
    DomainError,
    PositivityLossError,
    PreconditionError,
)
from afpde.fields import GridSpec, ScalarField, SymTensorField, grid_lp
from afpde.geometry import (
    MetricData,
    build_cache,
    flat_metric,
    laplace_beltrami,
)
from afpde.norms import NormSpec
from afpde.yamabe import (
    FlattenOptions,
    TestFunctionBank,
    YamabeSpec,
    aubin_profile,
    bump_profile,
    conformal_flatten,
    estimate_infimum,
    make_yamabe_bank,
    quotient,
)

GRID32 = GridSpec(3, 16.0, 32)
GRID64 = GridSpec(3, 16.0, 64)
SPEC = NormSpec(2.0, -1.0, 2.0)
Y = YamabeSpec()

DIAG = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def conformal_cache(grid, amp, width):
    """Cache of psi^4 * delta for psi = 1 + amp exp(-r^2/width^2)."""
    X = grid.coords()
    r2 = sum(x * x for x in X)
    psi = 1.0 + amp * np.exp(-r2 / width**2)
    hval = psi**4 - 1.0
    comps = tuple(
        np.ascontiguousarray(hval if a == b else np.zeros(grid.shape))
        for (a, b) in DIAG)
    return build_cache(MetricData(SymTensorField(grid, comps), SPEC)), psi


def indefinite_cache(grid):
    """Random small metric perturbation whose curvature changes sign."""
    rng = np.random.default_rng(7)
    X = grid.coords()
    diag = np.zeros(grid.shape)
    off = np.zeros(grid.shape)
    for _ in range(3):
        c = rng.uniform(-3, 3, 3)
        wdt = rng.uniform(1.5, 3.0)
        amp = rng.uniform(-0.02, 0.02)
        r2 = sum((x - cc) ** 2 for x, cc in zip(X, c))
        diag = diag + amp * np.exp(-r2 / wdt**2)
        off = off + 0.5 * amp * np.exp(-r2 / wdt**2)
    comps = tuple(np.ascontiguousarray(diag if a == b else off)
                  for (a, b) in DIAG)
    return build_cache(MetricData(SymTensorField(grid, comps), SPEC))


@pytest.fixture(scope="module")
def flat32():
    return build_cache(flat_metric(GRID32))


@pytest.fixture(scope="module")
def bank32():
    return make_yamabe_bank(GRID32, Y, 12, 0)


# ---------------------------------------------------------------------------
# dimension constants


def test_spec_constants_three_dimensions():
    assert Y.s_n == 0.125
    assert Y.two_star == 6.0


def test_spec_constants_other_dimensions():
    four = YamabeSpec(4)
    assert four.s_n == pytest.approx(2.0 / 12.0)
    assert four.two_star == pytest.approx(4.0)
    five = YamabeSpec(5)
    assert five.s_n == pytest.approx(3.0 / 16.0)
    assert five.two_star == pytest.approx(10.0 / 3.0)


def test_spec_rejects_bad_dimension():
    with pytest.raises(ConfigurationError, match="integer >= 3"):
        YamabeSpec(2)
    with pytest.raises(ConfigurationError, match="integer >= 3"):
        YamabeSpec(3.0)


# ---------------------------------------------------------------------------
# trial profiles and banks


def test_profile_width_validation():
    with pytest.raises(ConfigurationError, match="width must be positive"):
        aubin_profile(GRID32, Y, 0.0, (0.0, 0.0, 0.0))
    with pytest.raises(ConfigurationError, match="width must be positive"):
        bump_profile(GRID32, -1.0, (0.0, 0.0, 0.0))


def test_aubin_profile_windowed():
    phi = aubin_profile(GRID32, Y, 2.0, (0.0, 0.0, 0.0), amplitude=1.5)
    # center value carries the full amplitude, the window is 1 there
    assert phi.values[16, 16, 16] == pytest.approx(1.5)
    # compact support: exact zeros outside the window radius
    r = GRID32.radius()
    assert np.all(phi.values[r >= 12.0] == 0.0)
    assert float(np.abs(phi.values[0, :, :]).max()) == 0.0


def test_bump_profile_peak_and_decay():
    phi = bump_profile(GRID32, 2.0, (1.0, -2.0, 3.0), amplitude=0.7)
    idx = (16 + 1, 16 - 2, 16 + 3)
    assert phi.values[idx] == pytest.approx(0.7)
    edge = max(float(np.abs(np.take(phi.values, i, axis=ax)).max())
               for ax in range(3) for i in (0, -1))
    assert edge <= 1e-10


def test_bank_rejects_boundary_contamination():
    wide = bump_profile(GRID32, 6.0, (0.0, 0.0, 0.0))
    with pytest.raises(ConfigurationError,
                       match="does not decay at the boundary"):
        TestFunctionBank(GRID32, (wide,), ({"kind": "bump"},))


def test_bank_structural_validation():
    zero = ScalarField(GRID32, np.zeros(GRID32.shape))
    with pytest.raises(ConfigurationError, match="identically zero"):
        TestFunctionBank(GRID32, (zero,), ({},))
    good = bump_profile(GRID32, 1.5, (0.0, 0.0, 0.0))
    with pytest.raises(ConfigurationError, match="one parameter record"):
        TestFunctionBank(GRID32, (good,), ({}, {}))
    with pytest.raises(ConfigurationError, match="at least one member"):
        TestFunctionBank(GRID32, (), ())
    other = bump_profile(GridSpec(3, 16.0, 16), 1.5, (0.0, 0.0, 0.0))
    with pytest.raises(DomainError, match="bank grid"):
        TestFunctionBank(GRID32, (other,), ({},))


def test_make_bank_deterministic_and_nested(bank32):
    again = make_yamabe_bank(GRID32, Y, 12, 0)
    for a, b in zip(bank32.members, again.members):
        assert np.array_equal(a.values, b.values)
    small = make_yamabe_bank(GRID32, Y, 4, 0)
    for i in range(4):
        assert np.array_equal(small.members[i].values,
                              bank32.members[i].values)
    kinds = [rec["kind"] for rec in bank32.params]
    assert kinds[::2] == ["aubin"] * 6 and kinds[1::2] == ["bump"] * 6
    with pytest.raises(ConfigurationError, match="size must be >= 1"):
        make_yamabe_bank(GRID32, Y, 0)


# ---------------------------------------------------------------------------
# the quotient


def test_flat_bank_quotients_positive(flat32, bank32):
    vals = [quotient(flat32, phi, Y) for phi in bank32.members]
    assert all(6.5 < q < 10.5 for q in vals)
    assert 7.0 < min(vals) < 7.8


def test_quotient_homogeneity(flat32, bank32):
    phi = bank32.members[0]
    q1 = quotient(flat32, phi, Y)
    q2 = quotient(flat32, ScalarField(GRID32, 3.7 * phi.values), Y)
    assert abs(q2 - q1) / q1 <= 1e-13


def test_quotient_degenerate_rejected(flat32):
    tiny = bump_profile(GRID32, 1.0, (0.0, 0.0, 0.0), amplitude=1e-13)
    with pytest.raises(PreconditionError, match="degenerate test function"):
        quotient(flat32, tiny, Y)


def test_quotient_input_validation(flat32):
    off = bump_profile(GridSpec(3, 16.0, 16), 1.5, (0.0, 0.0, 0.0))
    with pytest.raises(DomainError, match="grid does not match"):
        quotient(flat32, off, Y)
    with pytest.raises(DomainError, match="ScalarField"):
        quotient(flat32, np.ones(GRID32.shape), Y)
    with pytest.raises(ConfigurationError, match="dimension"):
        quotient(flat32, bump_profile(GRID32, 1.5, (0, 0, 0)), YamabeSpec(4))


def test_quotient_dilation_invariance():
    # scale invariance at the critical exponent; the window is dilated
    # with the profile so the comparison stays inside the bank class.
    # N = 32 under-resolves the sharpened lambda = 1.5 profile (7.6e-2
    # discrepancy), so the identity is checked on the finer grid.
    cache = build_cache(flat_metric(GRID64))
    X = GRID64.coords()
    r2 = sum(x * x for x in X)
    for lam in (1.5, 0.75):
        sig, rw = 2.0, 12.0
        base = np.ascontiguousarray(
            (sig**2 / (sig**2 + r2)) ** 0.5
            * np.maximum(1.0 - r2 / rw**2, 0.0) ** 4)
        dil = np.ascontiguousarray(
            ((sig / lam) ** 2 / ((sig / lam) ** 2 + r2)) ** 0.5
            * np.maximum(1.0 - r2 / (rw / lam) ** 2, 0.0) ** 4)
        qa = quotient(cache, ScalarField(GRID64, base), Y)
        qb = quotient(cache, ScalarField(GRID64, dil), Y)
        # measured 3.9e-5 (lam 1.5) and 1.4e-8 (lam 0.75)
        assert abs(qa - qb) <= 1e-3


def test_quotient_conformal_covariance(bank32):
    cache, psi = conformal_cache(GRID32, 0.05, 2.0)
    flat = build_cache(flat_metric(GRID32))
    worst_abs = 0.0
    worst_rel = 0.0
    for phi in bank32.members:
        qc = quotient(cache, phi, Y)
        qf = quotient(flat, ScalarField(GRID32, psi * phi.values), Y)
        worst_abs = max(worst_abs, abs(qc - qf))
        worst_rel = max(worst_rel, abs(qc - qf) / abs(qf))
    # measured 2.67e-3 absolute, 2.79e-4 relative at N = 32
    assert worst_abs <= 1e-2
    assert worst_rel <= 1e-3


# ---------------------------------------------------------------------------
# infimum estimates


def test_estimate_flat_nested_monotone(flat32):
    vals = []
    for size in (4, 8, 12):
        bank = make_yamabe_bank(GRID32, Y, size, 0)
        est = estimate_infimum(flat32, bank, Y)
        assert est.evaluations >= size
        vals.append(est.value)
    assert vals[0] >= vals[1] >= vals[2]
    # measured 6.515 for the size-12 bank
    assert 6.0 < vals[2] < 7.0


def test_estimate_sweep_only(flat32, bank32):
    est = estimate_infimum(flat32, bank32, Y, descent_starts=0)
    sweep_min = min(quotient(flat32, phi, Y) for phi in bank32.members)
    assert est.value == pytest.approx(sweep_min, rel=0.0, abs=0.0)
    assert est.evaluations == len(bank32)
    assert est.argmin["kind"] in ("aubin", "bump")


def test_estimate_deep_well_below_flat(flat32, bank32):
    flat_est = estimate_infimum(flat32, bank32, Y)
    cache, _ = conformal_cache(GRID32, 2.0, 1.5)
    # confirm the well before asserting anything about the estimate
    assert float(cache.scalar.values.min()) < -10.0
    est = estimate_infimum(cache, bank32, Y)
    assert est.value < flat_est.value - 0.5
    assert 0.0 < est.value < 5.8  # measured 4.92


def test_estimate_negative_for_sharp_spike(bank32):
    cache, _ = conformal_cache(GRID32, 4.0, 1.2)
    assert float(cache.scalar.values.min()) < -1000.0
    est = estimate_infimum(cache, bank32, Y)
    assert est.value < 0.0  # measured -440


def test_estimate_grid_mismatch(flat32):
    bank = make_yamabe_bank(GRID64, Y, 2, 0)
    with pytest.raises(DomainError, match="bank grid"):
        estimate_infimum(flat32, bank, Y)


# ---------------------------------------------------------------------------
# scalar-flattening


def test_flatten_flat_identity(flat32):
    phi, g_hat, rep = conformal_flatten(flat32, Y)
    assert np.all(phi.values == 1.0)
    assert rep.lam_path == ()
    assert rep.estimate is None
    assert rep.curvature_before == 0.0
    assert rep.curvature_after == 0.0
    assert isinstance(g_hat, MetricData)
    assert max(float(np.abs(c).max()) for c in g_hat.h.components) == 0.0
    assert "skipped" in rep.summary()


def test_flatten_conformally_flat():
    cache, psi = conformal_cache(GRID32, 0.05, 2.0)
    phi, g_hat, rep = conformal_flatten(cache, Y)
    assert 1.0 < rep.curvature_before < 1.6
    # measured 8.89e-2 at N = 32
    assert rep.curvature_after < 0.15
    assert rep.curvature_after < rep.curvature_before / 10.0
    assert rep.halvings == 0
    assert np.allclose(rep.lam_path, np.linspace(0.1, 1.0, 10))
    assert all(m > 0.9 for m in rep.min_phi_trace)
    assert rep.estimate is not None and rep.estimate > 0.0
    assert rep.residual <= 1e-7
    assert 0.9 < float(phi.values.min()) < 1.0
    # the recovered factor undoes the synthetic one up to a constant
    prod = phi.values * psi
    spread = (prod.max() - prod.min()) / prod.mean()
    assert spread <= 5e-3  # measured 2.4e-3
    # pointwise transformation law on the core window
    lap = laplace_beltrami(cache, phi).values
    Rg = cache.scalar.values
    Rhat = build_cache(g_hat).scalar.values
    law = phi.values**5 * Rhat - (Rg * phi.values - 8.0 * lap)
    win = sum(x * x for x in GRID32.coords()) < 64.0
    assert float(np.abs(law[win]).max()) <= 5e-3  # measured 1.8e-3


def test_flatten_refinement():
    cache32, _ = conformal_cache(GRID32, 0.05, 2.0)
    _, _, rep32 = conformal_flatten(cache32, Y)
    cache64, psi64 = conformal_cache(GRID64, 0.05, 2.0)
    phi64, g_hat64, rep64 = conformal_flatten(cache64, Y)
    # measured 2.82e-2 at N = 64, ratio 3.16 against N = 32
    assert rep64.curvature_after <= 5e-2
    assert rep32.curvature_after / rep64.curvature_after >= 2.0
    prod = phi64.values * psi64
    assert (prod.max() - prod.min()) / prod.mean() <= 1e-3  # 7.6e-4
    lap = laplace_beltrami(cache64, phi64).values
    law = (phi64.values**5 * build_cache(g_hat64).scalar.values
           - (cache64.scalar.values * phi64.values - 8.0 * lap))
    win = sum(x * x for x in GRID64.coords()) < 64.0
    assert float(np.abs(law[win]).max()) <= 1e-5  # measured 1.1e-7


def test_flatten_sign_indefinite_curvature():
    cache = indefinite_cache(GRID32)
    R = cache.scalar.values
    assert float(R.min()) < -5e-3 and float(R.max()) > 1e-3
    phi, _, rep = conformal_flatten(cache, Y)
    # measured 6.7e-2 -> 4.1e-3
    assert rep.curvature_after <= 1e-2
    assert rep.curvature_after < rep.curvature_before / 10.0
    assert float(phi.values.min()) >= 0.999
    assert 6.0 < rep.estimate < 9.0


def test_flatten_gate_blocks_nonpositive_estimate():
    cache, _ = conformal_cache(GRID32, 4.0, 1.2)
    with pytest.raises(PositivityLossError, match="nonpositive"):
        conformal_flatten(cache, Y)


def test_flatten_gate_can_be_skipped():
    cache = indefinite_cache(GRID32)
    opts = FlattenOptions(gate=False)
    _, _, rep = conformal_flatten(cache, Y, opts)
    assert rep.estimate is None
    assert rep.estimate_params is None
    assert rep.curvature_after <= 1e-2


def test_flatten_alarm_trips():
    cache, _ = conformal_cache(GRID32, 0.05, 2.0)
    opts = FlattenOptions(positivity_alarm=0.999)
    with pytest.raises(PositivityLossError,
                       match="positivity margin lost at lambda"):
        conformal_flatten(cache, Y, opts)


def test_flatten_options_validation():
    with pytest.raises(ConfigurationError, match="lam_min <= lam_init"):
        FlattenOptions(lam_init=0.0)
    with pytest.raises(ConfigurationError, match="lam_min <= lam_init"):
        FlattenOptions(lam_init=0.1, lam_min=0.2)
    with pytest.raises(ConfigurationError, match="alarm"):
        FlattenOptions(positivity_alarm=1.0)
    with pytest.raises(ConfigurationError, match="bank size"):
        FlattenOptions(bank_size=0)


def test_flatten_dimension_mismatch(flat32):
    with pytest.raises(ConfigurationError, match="dimension"):
        conformal_flatten(flat32, YamabeSpec(4))


def test_flatten_report_summary():
    cache, _ = conformal_cache(GRID32, 0.05, 2.0)
    _, _, rep = conformal_flatten(cache, Y)
    text = rep.summary()
    assert "scalar-flattening" in text
    assert text.count("lambda=") == len(rep.lam_path)
    assert "quotient gate estimate" in text

"""Continuation solver tests.

Recovery problems are manufactured from potentials of nonnegative
compact sources, so the density m = (-Lap u* + a0 u*) / h(u*) is
genuinely nonnegative; a peaked positive profile taken directly as u*
fails that sign requirement (its Laplacian changes sign outside the
core) and the constructor must reject it.
"""

import os

import numpy as np
import pytest

from afpde.elliptic import ConstCoeffOp, asy_from_cache, const_inverse
from afpde.errors import (
    BarrierError,
    ConfigurationError,
    ContinuationError,
    DomainError,
    PreconditionError,
)
from afpde.fields import GridSpec, ScalarField, SymTensorField, grid_lp, read_aff
from afpde.geometry import MetricData, build_cache, flat_metric
from afpde.norms import NormSpec, weighted_norm_dyadic
from afpde.semilinear import (
    ContinuationOptions,
    ContinuationState,
    RHSTerm,
    SemilinearRHS,
    _damped_step,
    _l2,
    _residual,
    newton_correct,
    power_term,
    solve_semilinear,
)

GRID32 = GridSpec(3, 16.0, 32)
GRID16 = GridSpec(3, 16.0, 16)
SPEC = NormSpec(2.0, -1.0, 2.0)


def rel_l2(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    return grid_lp(a - b, 2.0, grid) / grid_lp(b, 2.0, grid)


def gaussian(grid: GridSpec, width: float, amp: float = 1.0) -> ScalarField:
    X = grid.coords()
    r2 = sum(x * x for x in X)
    return ScalarField(
        grid, np.ascontiguousarray(amp * np.exp(-r2 / width**2)))


def conformal_cache(grid: GridSpec, amp: float, width: float):
    X = grid.coords()
    r2 = sum(x * x for x in X)
    psi = 1.0 + amp * np.exp(-r2 / width**2)
    hval = psi**4 - 1.0
    comps = tuple(
        np.ascontiguousarray(hval if a == b else np.zeros(grid.shape))
        for (a, b) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)])
    return build_cache(MetricData(SymTensorField(grid, comps), SPEC))


def manufactured_problem(grid: GridSpec):
    """u* = potential of a positive Gaussian; single alpha=2 term."""
    rho = gaussian(grid, 1.0, amp=0.8)
    a0 = gaussian(grid, 2.0, amp=0.1)
    ustar = const_inverse(ConstCoeffOp.scalar_laplacian(3), rho)
    m1 = ScalarField(grid, (rho.values + a0.values * ustar.values)
                     * (1.0 + ustar.values) ** 2)
    rhs = SemilinearRHS((power_term(2.0, m1),))
    return a0, ustar, rhs


@pytest.fixture(scope="module")
def flat32():
    return build_cache(flat_metric(GRID32))


@pytest.fixture(scope="module")
def flat16():
    return build_cache(flat_metric(GRID16))


@pytest.fixture(scope="module")
def manu32():
    return manufactured_problem(GRID32)


@pytest.fixture(scope="module")
def solved32(flat32, manu32):
    a0, ustar, rhs = manu32
    return solve_semilinear(flat32, a0, rhs)


def test_power_term_profile():
    m = gaussian(GRID16, 1.0)
    term = power_term(3.0, m)
    assert term.h(0.0) == pytest.approx(1.0)
    assert term.h(1.0) == pytest.approx(2.0 ** -3)
    t = np.linspace(-0.5, 4.0, 7)
    eps = 1e-6
    fd = (term.h(t + eps) - term.h(t - eps)) / (2 * eps)
    assert np.allclose(term.h_prime(t), fd, rtol=1e-8, atol=1e-8)
    with pytest.raises(ConfigurationError):
        power_term(0.0, m)
    with pytest.raises(ConfigurationError):
        power_term(-1.0, m)


def test_rhs_rejects_negative_profile():
    m = gaussian(GRID16, 1.0)
    with pytest.raises(PreconditionError, match="h >= 0"):
        SemilinearRHS((RHSTerm(lambda t: np.asarray(t) * 0.0 - 1.0,
                               lambda t: np.asarray(t) * 0.0, m),))


def test_rhs_rejects_increasing_profile():
    m = gaussian(GRID16, 1.0)
    with pytest.raises(PreconditionError, match="h' <= 0"):
        SemilinearRHS((RHSTerm(lambda t: 1.0 + np.asarray(t),
                               lambda t: np.asarray(t) * 0.0 + 1.0, m),))


def test_rhs_rejects_negative_density():
    m = gaussian(GRID16, 1.0, amp=-1.0)
    with pytest.raises(PreconditionError, match="m >= 0"):
        SemilinearRHS((power_term(2.0, m),))


def test_rhs_rejects_structure_problems():
    m = gaussian(GRID16, 1.0)
    with pytest.raises(ConfigurationError):
        SemilinearRHS(())
    with pytest.raises(ConfigurationError):
        SemilinearRHS(("not a term",))
    with pytest.raises(ConfigurationError, match="vectorized"):
        SemilinearRHS((RHSTerm(lambda t: 1.0, lambda t: 0.0, m),))
    other = gaussian(GRID32, 1.0)
    with pytest.raises(DomainError):
        SemilinearRHS((power_term(2.0, m), power_term(2.0, other)))


def test_peaked_profile_density_changes_sign():
    # taking the Gaussian itself as the target solution makes the
    # manufactured density proportional to (6 - 4r^2 + a0)e^{-r^2},
    # which is negative outside the core; the constructor must refuse it
    X = GRID32.coords()
    r2 = sum(x * x for x in X)
    a = 0.5
    ustar = a * np.exp(-r2)
    a0 = 0.1 * np.exp(-r2 / 4.0)
    neg_lap = a * (6.0 - 4.0 * r2) * np.exp(-r2)
    m1 = np.ascontiguousarray(
        (neg_lap + a0 * ustar) * (1.0 + ustar) ** 2)
    assert m1.min() < 0.0
    with pytest.raises(PreconditionError, match="m >= 0"):
        SemilinearRHS((power_term(2.0, ScalarField(GRID32, m1)),))


def test_zero_density_gives_zero_field(flat16):
    zero = ScalarField(GRID16, np.zeros(GRID16.shape))
    rhs = SemilinearRHS((power_term(2.0, zero),))
    rep = solve_semilinear(flat16, zero, rhs)
    assert rep.converged
    assert rep.scale == 0.0
    assert np.array_equal(rep.u.values, np.zeros(GRID16.shape))
    assert len(rep.path) == 1
    assert rep.residual == 0.0
    assert rep.state.tau == pytest.approx(1.0)


def test_manufactured_recovery(solved32, manu32):
    a0, ustar, rhs = manu32
    rep = solved32
    assert rep.converged
    # measured 3.0e-13; the acceptance band is 1e-5
    assert rel_l2(rep.u.values, ustar.values, GRID32) <= 1e-8
    assert rep.residual <= 1e-8
    assert float(rep.u.values.min()) >= -1e-8


def test_path_structure_and_step_policy(solved32):
    rep = solved32
    taus = [r["tau"] for r in rep.path]
    assert taus == sorted(taus)
    assert taus[-1] == pytest.approx(1.0, abs=1e-12)
    assert 4 <= len(taus) <= 8
    for rec in rep.path:
        assert 1e-4 <= rec["dtau"] <= 0.25
        assert rec["newton_iterations"] <= 4
        assert rec["residual"] <= 1e-8
    # easy steps double the step twice before the cap bites
    assert rep.halvings == 0
    assert rep.doublings == 2


def test_min_u_nonnegative_along_path(solved32):
    for rec in solved32.path:
        assert rec["min_u"] >= -1e-8


def test_quadratic_convergence_from_logs(solved32):
    hist = solved32.path[-1]["newton_residuals"]
    assert len(hist) >= 3
    # measured ratios ~0.14; a linear rate would push these to ~1/r
    for k in range(len(hist) - 1):
        assert hist[k + 1] / hist[k] ** 2 <= 2.0


def test_restart_matches_full_path(flat32, manu32, solved32):
    a0, ustar, rhs = manu32
    half = solve_semilinear(flat32, a0, rhs, tau_target=0.5,
                            opts=ContinuationOptions(dtau_init=0.07))
    assert half.state.tau == pytest.approx(0.5, abs=1e-12)
    again = solve_semilinear(flat32, a0, rhs, start=half.state,
                             opts=ContinuationOptions(dtau_init=0.11))
    # uniqueness probe: measured 3.0e-13, band 10 * rtol_nl
    assert rel_l2(again.u.values, solved32.u.values, GRID32) <= 1e-7


def test_monotone_bound_along_path(solved32, manu32):
    a0, ustar, rhs = manu32
    fspec = NormSpec(0.0, 1.0, 2.0)
    fu = rhs.evaluate(solved32.u.values)
    lhs = weighted_norm_dyadic(ScalarField(GRID32, fu), fspec).value
    bound = sum(float(t.h(0.0)) * weighted_norm_dyadic(t.m, fspec).value
                for t in rhs.terms)
    # measured ratio 0.61; h(u) <= h(0) pointwise once u >= 0
    assert lhs <= 1.0 * bound


def test_conformal_source_instance():
    # power -3 and power -7 terms with nonnegative densities on a curved
    # background; the shifted unknown 1 + u must stay at or above 1
    curved = conformal_cache(GRID32, 0.05, 2.0)
    zhat = gaussian(GRID32, 1.5, amp=0.05)
    m1 = ScalarField(GRID32, 2.0 * np.pi * zhat.values)
    ksq = gaussian(GRID32, 1.8, amp=0.1)
    m2 = ScalarField(GRID32, 0.125 * ksq.values**2)
    rhs = SemilinearRHS((power_term(3.0, m1), power_term(7.0, m2)))
    zero = ScalarField(GRID32, np.zeros(GRID32.shape))
    rep = solve_semilinear(curved, zero, rhs)
    assert rep.converged
    assert rep.residual <= 1e-8
    # measured min(u) = +1.2e-2: strictly positive, far above -1e-10
    assert float(rep.u.values.min()) >= 1e-3
    assert float(rep.u.values.min()) >= -1e-10
    assert float(rep.u.values.max()) < 1.0


def test_newton_correct_at_solution(solved32, flat32, manu32):
    a0, ustar, rhs = manu32
    state = solved32.state
    out = newton_correct(state, flat32, a0, rhs)
    assert out.stats["accepted"]
    unorm = grid_lp(state.u.values, 2.0, GRID32)
    assert out.stats["correction"] / unorm <= 1e-8
    before, after = out.stats["residuals"]
    assert after <= before


def test_newton_correct_contracts_inflated_state(solved32, flat32, manu32):
    a0, ustar, rhs = manu32
    state = solved32.state
    bump = gaussian(GRID32, 2.5, amp=0.88)
    lifted = ScalarField(GRID32, state.u.values - bump.values)
    shifted = ScalarField(
        GRID32, state.source.values
        - ConstCoeffOp.scalar_laplacian(3).apply(bump).values)
    cur = ContinuationState(tau=1.0, u=lifted, dtau=0.1, source=shifted)
    first = None
    for _ in range(8):
        cur = newton_correct(cur, flat32, a0, rhs)
        before, after = cur.stats["residuals"]
        assert cur.stats["accepted"]
        assert cur.stats["damping"] is not None
        assert after < before
        if first is None:
            first = before
        if after <= 1e-8 * first:
            break
    assert cur.stats["residuals"][1] <= 1e-8 * first


def test_newton_correct_without_source(flat32, manu32):
    # compact hand-built state: the periodic reconstruction of the
    # substituted variable is exact, one step nearly solves tau = 0
    a0, ustar, rhs = manu32
    state = ContinuationState(tau=0.0, u=gaussian(GRID32, 1.5, amp=0.1),
                              dtau=0.1)
    out = newton_correct(state, flat32, a0, rhs)
    before, after = out.stats["residuals"]
    assert out.stats["accepted"]
    assert after <= 1e-6 * before


def test_damped_step_line_search(flat32, manu32, solved32):
    a0, ustar, rhs = manu32
    L = asy_from_cache(flat32, a0, SPEC)
    u0 = solved32.u.values * 0.7
    v0 = solved32.state.source.values * 0.7
    r0 = _l2(_residual(L, rhs, 1.0, u0, v0), GRID32)
    du = solved32.u.values - u0
    dv = solved32.state.source.values - v0

    exact = _damped_step(L, rhs, 1.0, u0, v0, du, dv, r0, 0.0, GRID32)
    assert exact is not None and exact[4] == 1.0
    assert exact[3] <= 1e-9

    inflated = _damped_step(L, rhs, 1.0, u0, v0, 8.0 * du, 8.0 * dv,
                            r0, 0.0, GRID32)
    assert inflated is not None
    assert inflated[4] < 1.0
    assert inflated[3] < r0

    hopeless = _damped_step(L, rhs, 1.0, u0, v0, 40.0 * du, 40.0 * dv,
                            r0, 0.0, GRID32)
    assert hopeless is None
    rng = np.random.default_rng(3)
    junk = rng.normal(size=GRID32.shape) * 1e4
    assert _damped_step(L, rhs, 1.0, u0, v0, junk, junk, r0, 0.0,
                        GRID32) is None


def test_continuation_failure_carries_state(flat16):
    rho = gaussian(GRID16, 1.5, amp=0.8)
    ustar = const_inverse(ConstCoeffOp.scalar_laplacian(3), rho)
    m1 = ScalarField(GRID16, rho.values * (1.0 + ustar.values) ** 2)
    rhs = SemilinearRHS((power_term(2.0, m1),))
    zero = ScalarField(GRID16, np.zeros(GRID16.shape))
    with pytest.raises(ContinuationError, match="fell below") as info:
        solve_semilinear(flat16, zero, rhs,
                         opts=ContinuationOptions(max_newton=1,
                                                  rtol_nl=1e-30))
    err = info.value
    assert isinstance(err.state, ContinuationState)
    assert err.state.tau == 0.0
    assert len(err.history) >= 1


def test_barrier_error_on_state_construction():
    low = ScalarField(GRID16, np.full(GRID16.shape, -1.0 + 1e-7))
    with pytest.raises(BarrierError, match="barrier"):
        ContinuationState(tau=0.5, u=low, dtau=0.1)
    fine = ScalarField(GRID16, np.full(GRID16.shape, -0.5))
    state = ContinuationState(tau=0.5, u=fine, dtau=0.1)
    assert state.tau == 0.5


def test_state_validation():
    u = ScalarField(GRID16, np.zeros(GRID16.shape))
    with pytest.raises(ConfigurationError):
        ContinuationState(tau=1.5, u=u, dtau=0.1)
    with pytest.raises(ConfigurationError):
        ContinuationState(tau=0.5, u=u, dtau=0.0)
    with pytest.raises(DomainError):
        ContinuationState(tau=0.5, u=u, dtau=0.1,
                          source=ScalarField(GRID32,
                                             np.zeros(GRID32.shape)))


def test_options_validation():
    with pytest.raises(ConfigurationError):
        ContinuationOptions(rtol_nl=0.0)
    with pytest.raises(ConfigurationError):
        ContinuationOptions(dtau_min=0.2, dtau_init=0.1)
    with pytest.raises(ConfigurationError):
        ContinuationOptions(dtau_max=1.5)
    with pytest.raises(ConfigurationError):
        ContinuationOptions(max_newton=0)
    with pytest.raises(ConfigurationError):
        ContinuationOptions(tol_mp=-1.0)


def test_problem_gates(flat32, flat16, manu32):
    a0, ustar, rhs = manu32
    bad_a0 = ScalarField(GRID32, -a0.values)
    with pytest.raises(PreconditionError, match="a0 >= 0"):
        solve_semilinear(flat32, bad_a0, rhs)
    with pytest.raises(DomainError):
        solve_semilinear(flat16, a0, rhs)
    with pytest.raises(PreconditionError, match="delta in"):
        solve_semilinear(flat32, a0, rhs,
                         opts=ContinuationOptions(
                             spec=NormSpec(2.0, -3.0, 2.0)))
    with pytest.raises(ConfigurationError):
        solve_semilinear(flat32, a0, rhs, tau_target=0.0)
    with pytest.raises(ConfigurationError):
        solve_semilinear(flat32, a0, rhs, tau_target=1.5)


def test_restart_gates(flat32, manu32, solved32):
    a0, ustar, rhs = manu32
    with pytest.raises(ConfigurationError, match="past"):
        solve_semilinear(flat32, a0, rhs, start=solved32.state,
                         tau_target=1.0)
    other = ContinuationState(tau=0.5,
                              u=ScalarField(GRID16, np.zeros(GRID16.shape)),
                              dtau=0.1)
    with pytest.raises(DomainError):
        solve_semilinear(flat32, a0, rhs, start=other)


def test_checkpoint_dump(tmp_path, flat16):
    rho = gaussian(GRID16, 1.5, amp=0.8)
    ustar = const_inverse(ConstCoeffOp.scalar_laplacian(3), rho)
    m1 = ScalarField(GRID16, rho.values * (1.0 + ustar.values) ** 2)
    rhs = SemilinearRHS((power_term(2.0, m1),))
    zero = ScalarField(GRID16, np.zeros(GRID16.shape))
    out = str(tmp_path / "checkpoints")
    rep = solve_semilinear(flat16, zero, rhs,
                           opts=ContinuationOptions(checkpoint_dir=out))
    names = sorted(os.listdir(out))
    assert len(names) == len(rep.path)
    assert all(n.startswith("u_tau_") and n.endswith(".aff") for n in names)
    final = read_aff(os.path.join(out, names[-1]))
    assert np.array_equal(final.values, rep.u.values)


def test_report_summary_text(solved32):
    text = solved32.summary()
    assert "accepted steps" in text
    assert "final relative residual" in text
    assert text.count("\n  tau=") == len(solved32.path)

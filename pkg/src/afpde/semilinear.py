"""Homotopy continuation for -Lap_g u + a0 u = F(u, .).

The right-hand side is F(u, x) = sum_i h_i(u) m_i(x) with each profile
h_i nonnegative and non-increasing on (-1, inf) and each density m_i
nonnegative, so the linearized zeroth-order coefficient a0 - tau dF/du
stays nonnegative along the whole path and every Newton step is a
well-posed linear solve.

The path variable tau in [0, 1] scales the right-hand side.  States are
kept as the pair (u, v) with u = M v, M the free-space kernel inverse of
the flat reference operator, and the nonlinear residual is evaluated in
the same substituted form the linear engine certifies,

    R(v, tau) = v + P(M v) - tau F(M v, .),

where P = L - A_inf carries only decaying coefficients.  Every factor in
R decays toward the box boundary, so the convergence test never applies
a periodic derivative to the solution's 1/r tail; the seam inconsistency
that pollutes the strong periodic residual cannot enter here.

The predictor differentiates the path equation in tau and takes one
explicit Euler step; the corrector is damped Newton at fixed tau.  Step
control halves the tau step when Newton fails and doubles it after two
consecutive easy steps.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .elliptic import (
    AsyOperator,
    SolveOptions,
    _apply_asy_values,
    asy_from_cache,
    solve_linear,
)
from .errors import (
    BarrierError,
    ConfigurationError,
    ContinuationError,
    DomainError,
    PreconditionError,
)
from .fields import ScalarField, grid_lp, write_aff
from .geometry import GeometryCache
from .norms import NormSpec

__all__ = [
    "BARRIER_EPS",
    "ContinuationOptions",
    "ContinuationReport",
    "ContinuationState",
    "RHSTerm",
    "SemilinearRHS",
    "newton_correct",
    "power_term",
    "solve_semilinear",
]

# profiles are defined on (-1, inf); trial iterates are clamped this far
# from the endpoint, and accepted states must clear it unclamped
BARRIER_EPS = 1e-6

_DAMPING = (1.0, 0.5, 0.25, 0.125, 0.0625)

# profile hypotheses are checked on a fixed 1000-point sample of
# (-1, inf): geometric refinement toward the barrier, a linear midrange,
# geometric growth outward
_SAMPLE_T = np.concatenate([
    -1.0 + np.geomspace(1e-8, 1.0, 400, endpoint=False),
    np.linspace(0.0, 40.0, 400, endpoint=False),
    np.geomspace(40.0, 1e6, 200),
])


@dataclass(frozen=True)
class RHSTerm:
    """One product term h(u) m(x): profile, its derivative, density."""

    h: Callable
    h_prime: Callable
    m: ScalarField


def power_term(alpha: float, m: ScalarField) -> RHSTerm:
    """Built-in power-law profile h(t) = (1+t)^(-alpha), alpha > 0."""
    if not (isinstance(alpha, (int, float)) and math.isfinite(alpha)
            and alpha > 0):
        raise ConfigurationError("power-law exponent must be positive")
    a = float(alpha)

    def h(t):
        return (1.0 + np.asarray(t, dtype=float)) ** (-a)

    def h_prime(t):
        return -a * (1.0 + np.asarray(t, dtype=float)) ** (-a - 1.0)

    return RHSTerm(h, h_prime, m)


@dataclass(frozen=True)
class SemilinearRHS:
    """Validated right-hand side F(u, x) = sum_i h_i(u) m_i(x).

    Construction samples each profile at 10^3 points of (-1, inf) and
    rejects profiles that go negative or increase; densities must be
    nonnegative pointwise.  Handles must be vectorized over ndarrays.
    """

    terms: tuple

    def __post_init__(self) -> None:
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ConfigurationError("rhs needs at least one term")
        grid = None
        for i, term in enumerate(terms):
            if not isinstance(term, RHSTerm):
                raise ConfigurationError(f"term {i} is not an RHSTerm")
            if not isinstance(term.m, ScalarField):
                raise DomainError(f"term {i}: density must be a ScalarField")
            if grid is None:
                grid = term.m.grid
            elif term.m.grid != grid:
                raise DomainError("densities live on different grids")
            with np.errstate(over="ignore", divide="ignore"):
                vals = np.asarray(term.h(_SAMPLE_T), dtype=float)
                slopes = np.asarray(term.h_prime(_SAMPLE_T), dtype=float)
            if vals.shape != _SAMPLE_T.shape or slopes.shape != _SAMPLE_T.shape:
                raise ConfigurationError(
                    f"term {i}: profile handles must be vectorized")
            if np.isnan(vals).any() or np.isnan(slopes).any():
                raise PreconditionError(
                    f"term {i}: profile undefined on the (-1, inf) sample")
            if vals.min() < -1e-12:
                raise PreconditionError(
                    f"hypothesis h >= 0 on (-1, inf) violated for term {i} "
                    "(sampled)")
            if slopes.max() > 1e-12:
                raise PreconditionError(
                    f"hypothesis h' <= 0 on (-1, inf) violated for term {i} "
                    "(sampled)")
            m_vals = term.m.values
            floor = -1e-12 * max(1.0, float(np.abs(m_vals).max()))
            if float(m_vals.min()) < floor:
                raise PreconditionError(
                    f"hypothesis m >= 0 violated for term {i}: "
                    f"min(m) = {float(m_vals.min()):.6e}")

    @property
    def grid(self):
        return self.terms[0].m.grid

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """F(u, .) on raw node values; caller guards the argument."""
        total = np.zeros(self.grid.shape)
        for term in self.terms:
            total += np.asarray(term.h(values), dtype=float) * term.m.values
        return total

    def derivative(self, values: np.ndarray) -> np.ndarray:
        """dF/du on raw node values; <= 0 wherever m >= 0."""
        total = np.zeros(self.grid.shape)
        for term in self.terms:
            total += np.asarray(term.h_prime(values),
                                dtype=float) * term.m.values
        return total

    def zero_level(self) -> np.ndarray:
        """F(0, .), the scale every nonlinear tolerance is relative to."""
        return self.evaluate(np.zeros(self.grid.shape))


@dataclass(frozen=True)
class ContinuationState:
    """One accepted point on the tau path.

    source is the substituted variable v with u = M v; solver-produced
    states always carry it, hand-built ones may omit it and have it
    reconstructed by a periodic reference apply (exact for compactly
    supported u).
    """

    tau: float
    u: ScalarField
    dtau: float
    stats: dict = field(default_factory=dict)
    source: ScalarField | None = None

    def __post_init__(self) -> None:
        if not (isinstance(self.tau, (int, float)) and 0.0 <= self.tau <= 1.0):
            raise ConfigurationError("tau must lie in [0, 1]")
        if not (isinstance(self.dtau, (int, float)) and self.dtau > 0.0):
            raise ConfigurationError("dtau must be positive")
        if not isinstance(self.u, ScalarField):
            raise DomainError("state field must be a ScalarField")
        low = float(self.u.values.min())
        if low <= -1.0 + BARRIER_EPS:
            raise BarrierError(
                f"state at tau = {float(self.tau):.6f} touches the -1 "
                f"barrier: min(u) = {low:.6e}")
        if self.source is not None and self.source.grid != self.u.grid:
            raise DomainError("source grid does not match state grid")


@dataclass(frozen=True)
class ContinuationOptions:
    """Tolerances and step policy for the tau continuation."""

    rtol_nl: float = 1e-8          # relative to |F(0, .)|_2
    dtau_init: float = 0.1
    dtau_min: float = 1e-4
    dtau_max: float = 0.25
    max_newton: int = 12
    easy_newton: int = 3           # steps at most this cheap count as easy
    tol_mp: float = 1e-8           # accepted states need min(u) >= -tol_mp
    spec: NormSpec = NormSpec(2.0, -1.0, 2.0)
    linear: SolveOptions = SolveOptions(compute_stability=False)
    checkpoint_dir: str | None = None

    def __post_init__(self) -> None:
        if not (self.rtol_nl > 0.0 and math.isfinite(self.rtol_nl)):
            raise ConfigurationError("rtol_nl must be positive")
        if not (0.0 < self.dtau_min <= self.dtau_init <= self.dtau_max <= 1.0):
            raise ConfigurationError(
                "need 0 < dtau_min <= dtau_init <= dtau_max <= 1")
        if self.max_newton < 1 or self.easy_newton < 1:
            raise ConfigurationError("iteration limits must be >= 1")
        if self.tol_mp < 0.0:
            raise ConfigurationError("tol_mp must be nonnegative")


@dataclass(frozen=True)
class ContinuationReport:
    """Final state plus the accepted-step history of the path."""

    state: ContinuationState
    path: tuple              # one record per accepted step
    halvings: int
    doublings: int
    residual: float          # final residual relative to scale
    scale: float             # |F(0, .)|_2
    converged: bool

    @property
    def u(self) -> ScalarField:
        return self.state.u

    def summary(self) -> str:
        lines = [
            f"continuation to tau = {float(self.state.tau):.6f}: "
            f"{len(self.path)} accepted steps, {self.halvings} halvings, "
            f"{self.doublings} doublings",
            f"scale |F(0,.)|_2 = {self.scale:.6e}, final relative residual "
            f"= {self.residual:.3e}",
        ]
        for rec in self.path:
            lines.append(
                f"  tau={rec['tau']:.6f} dtau={rec['dtau']:.3e} "
                f"newton={rec['newton_iterations']} "
                f"resid={rec['residual']:.3e} min(u)={rec['min_u']:.3e}")
        return "\n".join(lines)


def _l2(vals: np.ndarray, grid) -> float:
    return grid_lp(vals, 2.0, grid)


def _guarded(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, -1.0 + BARRIER_EPS)


def _residual(L: AsyOperator, rhs: SemilinearRHS, tau: float,
              u_vals: np.ndarray, v_vals: np.ndarray) -> np.ndarray:
    """R(v, tau) = v + P(Mv) - tau F(Mv); profile argument guarded."""
    with np.errstate(over="ignore", invalid="ignore"):
        f_vals = rhs.evaluate(_guarded(u_vals))
    return (v_vals + _apply_asy_values(L, u_vals, skip_reference=True)
            - tau * f_vals)


def _check_problem(cache: GeometryCache, a0: ScalarField,
                   rhs: SemilinearRHS, spec: NormSpec) -> None:
    if not isinstance(rhs, SemilinearRHS):
        raise ConfigurationError("rhs must be a SemilinearRHS")
    if not isinstance(a0, ScalarField):
        raise DomainError("a0 must be a ScalarField")
    if a0.grid != cache.grid or rhs.grid != cache.grid:
        raise DomainError("a0 and rhs must live on the geometry grid")
    floor = -1e-12 * max(1.0, float(np.abs(a0.values).max()))
    if float(a0.values.min()) < floor:
        raise PreconditionError("hypothesis a0 >= 0 violated")
    n = cache.grid.n
    lo, hi = -n / spec.p, -2.0 + n / spec.conjugate_p
    if not (lo < spec.delta < hi):
        raise PreconditionError(
            f"hypothesis delta in (-n/p, -2 + n/p') violated: "
            f"delta = {spec.delta} not in ({lo:.4f}, {hi:.4f})")


def _linearized_solve(L: AsyOperator, a0_vals: np.ndarray,
                      rhs: SemilinearRHS, tau: float, u_vals: np.ndarray,
                      f_vals: np.ndarray, opts: ContinuationOptions):
    """Solve (-Lap_g + a0 - tau dF(u)) w = f; coefficient >= 0 by h' <= 0."""
    grid = L.grid
    with np.errstate(over="ignore", invalid="ignore"):
        slope = rhs.derivative(_guarded(u_vals))
    step_op = L.with_zeroth_order(
        ScalarField(grid, a0_vals - tau * slope))
    return solve_linear(step_op, ScalarField(grid, f_vals), opts.linear)


def _damped_step(L: AsyOperator, rhs: SemilinearRHS, tau: float,
                 u_vals: np.ndarray, v_vals: np.ndarray,
                 du: np.ndarray, dv: np.ndarray, res: float,
                 tol: float, grid):
    """Backtrack along the Newton direction until the residual drops.

    Returns (u, v, R, res, lam) on acceptance, None when every damping
    factor fails to decrease the residual.
    """
    for lam in _DAMPING:
        u_try = u_vals + lam * du
        v_try = v_vals + lam * dv
        r_try = _residual(L, rhs, tau, u_try, v_try)
        size = _l2(r_try, grid)
        if math.isfinite(size) and (size <= tol or size < res):
            return u_try, v_try, r_try, size, lam
    return None


def _newton_at(L: AsyOperator, a0_vals: np.ndarray, rhs: SemilinearRHS,
               tau: float, u_vals: np.ndarray, v_vals: np.ndarray,
               tol: float, opts: ContinuationOptions):
    """Damped Newton at fixed tau; returns (u, v, residuals, converged)."""
    grid = L.grid
    res = _l2(_residual(L, rhs, tau, u_vals, v_vals), grid)
    residuals = [res]
    for _ in range(opts.max_newton):
        if residuals[-1] <= tol:
            break
        rep = _linearized_solve(
            L, a0_vals, rhs, tau, u_vals,
            -_residual(L, rhs, tau, u_vals, v_vals), opts)
        moved = _damped_step(L, rhs, tau, u_vals, v_vals,
                             rep.u.values, rep.source.values,
                             residuals[-1], tol, grid)
        if moved is None:
            return u_vals, v_vals, residuals, False
        u_vals, v_vals, _, res, _ = moved
        residuals.append(res)
    return u_vals, v_vals, residuals, residuals[-1] <= tol


def newton_correct(state: ContinuationState, cache: GeometryCache,
                   a0: ScalarField, rhs: SemilinearRHS,
                   opts: ContinuationOptions | None = None,
                   ) -> ContinuationState:
    """One damped Newton step at the state's own tau.

    The linearized solve goes through the gated linear path, so its
    zeroth-order coefficient a0 - tau dF/du is re-checked for the sign
    the profile hypotheses guarantee.  The returned state's stats record
    the residual before and after, the damping factor used, and whether
    the step was accepted; a step no damping factor can make decrease
    the residual is rejected and the state comes back unchanged apart
    from the stats.
    """
    opts = ContinuationOptions() if opts is None else opts
    _check_problem(cache, a0, rhs, opts.spec)
    if state.u.grid != cache.grid:
        raise DomainError("state grid does not match geometry grid")
    grid = cache.grid
    L = asy_from_cache(cache, a0, opts.spec)
    u_vals = state.u.values
    if state.source is not None:
        v_vals = state.source.values
    else:
        # periodic reconstruction; exact when u is compactly supported
        v_vals = L.reference.apply(state.u).values
    scale = _l2(rhs.zero_level(), grid)
    tol = opts.rtol_nl * (scale if scale > 0.0 else 1.0)

    tau = float(state.tau)
    r_arr = _residual(L, rhs, tau, u_vals, v_vals)
    res = _l2(r_arr, grid)
    rep = _linearized_solve(L, a0.values, rhs, tau, u_vals, -r_arr, opts)
    moved = _damped_step(L, rhs, tau, u_vals, v_vals,
                         rep.u.values, rep.source.values, res, tol, grid)
    if moved is None:
        stats = {"accepted": False, "damping": None,
                 "residuals": (res, res), "correction": 0.0}
        return replace(state, stats=stats)
    u_new, v_new, _, res_new, lam = moved
    stats = {
        "accepted": True,
        "damping": lam,
        "residuals": (res, res_new),
        "correction": _l2(lam * rep.u.values, grid),
    }
    return ContinuationState(
        tau=tau, u=ScalarField(grid, u_new), dtau=state.dtau,
        stats=stats, source=ScalarField(grid, v_new))


def solve_semilinear(cache: GeometryCache, a0: ScalarField,
                     rhs: SemilinearRHS,
                     opts: ContinuationOptions | None = None,
                     tau_target: float = 1.0,
                     start: ContinuationState | None = None,
                     ) -> ContinuationReport:
    """March the tau path from 0 (or a restart state) to tau_target.

    Each step predicts with one explicit Euler increment of the
    tau-derivative system and corrects with damped Newton.  Failure to
    converge halves the step; two consecutive easy steps double it; a
    step forced below dtau_min raises ContinuationError carrying the
    last good state.  Accepted states must clear the -1 barrier
    unclamped (else BarrierError) and satisfy min(u) >= -tol_mp.
    """
    opts = ContinuationOptions() if opts is None else opts
    _check_problem(cache, a0, rhs, opts.spec)
    if not (0.0 < tau_target <= 1.0):
        raise ConfigurationError("tau_target must lie in (0, 1]")
    grid = cache.grid
    L = asy_from_cache(cache, a0, opts.spec)
    a0_vals = a0.values

    scale = _l2(rhs.zero_level(), grid)
    if scale == 0.0:
        # F vanishes identically, so every tau shares the zero solution
        zero = ScalarField(grid, np.zeros(grid.shape))
        state = ContinuationState(
            tau=tau_target, u=zero, dtau=opts.dtau_init,
            stats={"iterations": 0, "residuals": (0.0,)}, source=zero)
        record = {"tau": tau_target, "dtau": opts.dtau_init,
                  "newton_iterations": 0, "residual": 0.0, "min_u": 0.0,
                  "newton_residuals": (0.0,)}
        return ContinuationReport(state, (record,), 0, 0, 0.0, scale, True)
    tol = opts.rtol_nl * scale

    if start is None:
        tau = 0.0
        u_vals = np.zeros(grid.shape)
        v_vals = np.zeros(grid.shape)
        last_good = ContinuationState(
            tau=0.0, u=ScalarField(grid, u_vals), dtau=opts.dtau_init,
            stats={"iterations": 0},
            source=ScalarField(grid, v_vals))
    else:
        if start.u.grid != grid:
            raise DomainError("start state grid does not match geometry grid")
        if not start.tau < tau_target:
            raise ConfigurationError("start state is already past tau_target")
        tau = float(start.tau)
        u_vals = np.array(start.u.values, dtype=float, copy=True)
        if start.source is not None:
            v_vals = np.array(start.source.values, dtype=float, copy=True)
        else:
            v_vals = L.reference.apply(start.u).values
        last_good = start

    if opts.checkpoint_dir is not None:
        os.makedirs(opts.checkpoint_dir, exist_ok=True)

    dtau = min(opts.dtau_init, tau_target - tau)
    path: list = []
    halvings = 0
    doublings = 0
    easy_streak = 0

    while tau < tau_target - 1e-14:
        step = min(dtau, tau_target - tau)
        tau_next = tau + step

        # predictor: explicit Euler on the tau-derivative system
        with np.errstate(over="ignore", invalid="ignore"):
            f_now = rhs.evaluate(_guarded(u_vals))
        pred = _linearized_solve(L, a0_vals, rhs, tau, u_vals, f_now, opts)
        u_try = u_vals + step * pred.u.values
        v_try = v_vals + step * pred.source.values

        u_new, v_new, residuals, ok = _newton_at(
            L, a0_vals, rhs, tau_next, u_try, v_try, tol, opts)
        min_u = float(u_new.min())

        if ok and min_u <= -1.0 + BARRIER_EPS:
            raise BarrierError(
                f"solution touched the -1 barrier at tau = {tau_next:.6f}: "
                f"min(u) = {min_u:.6e}")
        if ok and min_u < -opts.tol_mp:
            # converged to a state the maximum principle forbids; treat
            # as a step failure and retry shorter
            ok = False

        if not ok:
            halvings += 1
            easy_streak = 0
            dtau = dtau / 2.0
            if dtau < opts.dtau_min:
                raise ContinuationError(
                    f"continuation stalled at tau = {tau:.6f}: Newton did "
                    f"not converge and the step fell below "
                    f"{opts.dtau_min:.1e}",
                    state=last_good, history=tuple(residuals))
            continue

        tau = tau_next
        u_vals, v_vals = u_new, v_new
        iters = len(residuals) - 1
        rel = residuals[-1] / scale
        stats = {"iterations": iters,
                 "residuals": tuple(r / scale for r in residuals)}
        last_good = ContinuationState(
            tau=tau, u=ScalarField(grid, u_vals), dtau=step, stats=stats,
            source=ScalarField(grid, v_vals))
        path.append({
            "tau": tau, "dtau": step, "newton_iterations": iters,
            "residual": rel, "min_u": min_u,
            "newton_residuals": stats["residuals"],
        })
        if opts.checkpoint_dir is not None:
            write_aff(os.path.join(opts.checkpoint_dir,
                                   f"u_tau_{tau:.6f}.aff"), last_good.u)

        if iters <= opts.easy_newton:
            easy_streak += 1
            if easy_streak >= 2:
                grown = min(dtau * 2.0, opts.dtau_max)
                if grown > dtau:
                    doublings += 1
                dtau = grown
                easy_streak = 0
        else:
            easy_streak = 0

    return ContinuationReport(
        state=last_good, path=tuple(path), halvings=halvings,
        doublings=doublings, residual=path[-1]["residual"] if path else 0.0,
        scale=scale, converged=True)

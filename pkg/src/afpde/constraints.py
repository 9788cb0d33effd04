"""Constraint pipeline: vector momentum solve, scalar continuation,
pointwise fluid reconstruction, and defect certification.

The pipeline turns a free data set (metric seed, trace-free tensor seed,
matter densities, equation of state) into a full initial data set in
seven recorded stages: scalar flattening, seed rescaling, a Killing-type
vector solve that repairs the momentum defect, the conformal-factor
continuation, physical rescaling, nodewise fluid variable recovery, and
weighted-norm certification of the two constraint defects.

Conventions used throughout:

* all symmetric 2-tensors are contravariant, stored upper-triangle;
* the vector operator is ``lap W^b + (1/3) grad^b(div W) + Ric^b_e W^e``
  built from the cache metric, and the flat constant-coefficient part is
  always split off so the preconditioned system is exactly the identity
  on a flat cache;
* the fluid variable change and its Newton inversion work on the scalar
  pair (density power ``a``, speed ``v``), with the spatial direction
  carried separately as a metric-unit vector.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .elliptic import ConstCoeffOp, SolveOptions, const_inverse
from .errors import (
    AdmissibilityError,
    ConfigurationError,
    DomainError,
    PreconditionError,
    SolverError,
    SuperluminalDataError,
)
from .fields import (
    GridSpec,
    ScalarField,
    SymTensorField,
    VectorField,
    gradient,
    grid_lp,
    rfftn,
    weighted_lp,
)
from .geometry import (
    GeometryCache,
    MetricData,
    _second_derivatives,
    _sym_index,
    build_cache,
    conformal_transform,
    covariant_divergence,
)
from .norms import NormSpec, _derivative_field, weighted_norm_dyadic
from .semilinear import (
    ContinuationOptions,
    ContinuationReport,
    SemilinearRHS,
    power_term,
    solve_semilinear,
)
from .yamabe import FlattenOptions, YamabeSpec, conformal_flatten

__all__ = [
    "EOS",
    "FluidState",
    "FreeData",
    "InitialDataSet",
    "AssembleOptions",
    "MomentumReport",
    "LichnerowiczReport",
    "AdmissibilityTable",
    "remove_trace",
    "tt_project_flat",
    "conformal_killing",
    "lichnerowicz_laplacian",
    "momentum_solve",
    "lichnerowicz_solve",
    "makino_forward",
    "makino_invert",
    "admissibility_table",
    "s_oracle",
    "assemble",
    "constraint_residual",
]

_TINY = 1e-300


# ---------------------------------------------------------------------------
# equation of state and point fluid state


@dataclass(frozen=True)
class EOS:
    """Polytropic equation of state p = kappa rho^gamma.

    The exponent (gamma - 1) / 2 drives every fluid variable change
    below; gamma must exceed 1 and kappa must be positive for the
    change of variables to be invertible near vacuum.
    """

    gamma: float
    kappa: float

    def __post_init__(self):
        if not (isinstance(self.gamma, (int, float))
                and math.isfinite(self.gamma) and self.gamma > 1.0):
            raise ConfigurationError(
                f"polytropic equation of state requires gamma > 1, "
                f"got {self.gamma}")
        if not (isinstance(self.kappa, (int, float))
                and math.isfinite(self.kappa) and self.kappa > 0.0):
            raise ConfigurationError(
                f"polytropic constant kappa must be positive, "
                f"got {self.kappa}")

    @property
    def exponent(self) -> float:
        return (self.gamma - 1.0) / 2.0


@dataclass(frozen=True)
class FluidState:
    """Pointwise fluid unknowns: density power, speed-squared, direction.

    ``w`` is the density to the power (gamma - 1)/2, ``q`` is the squared
    metric norm of the spatial velocity, and ``direction`` is the unit
    spatial velocity vector (all zeros at rest).  The time component of
    the velocity is sqrt(1 + q) and is never stored.
    """

    w: float
    q: float
    direction: tuple

    def __post_init__(self):
        if not (math.isfinite(self.w) and self.w >= 0.0):
            raise DomainError(f"density power w must be >= 0, got {self.w}")
        if not (math.isfinite(self.q) and self.q >= 0.0):
            raise DomainError(f"squared speed q must be >= 0, got {self.q}")
        d = tuple(float(x) for x in self.direction)
        if len(d) != 3 or not all(math.isfinite(x) for x in d):
            raise DomainError("direction must be a finite 3-vector")
        object.__setattr__(self, "direction", d)


# ---------------------------------------------------------------------------
# tensor algebra helpers


def _full_matrix(T: SymTensorField) -> np.ndarray:
    grid = T.grid
    out = np.empty(grid.shape + (grid.n, grid.n))
    for (a, b) in _sym_index(grid.n):
        out[..., a, b] = T.comp(a, b)
        if a != b:
            out[..., b, a] = T.comp(a, b)
    return out


def _sym_from_matrix(grid: GridSpec, mat: np.ndarray) -> SymTensorField:
    comps = tuple(np.ascontiguousarray(mat[..., a, b])
                  for (a, b) in _sym_index(grid.n))
    return SymTensorField(grid, comps)


def _vec_l2(comps, grid: GridSpec) -> float:
    return math.sqrt(math.fsum(grid_lp(c, 2.0, grid) ** 2 for c in comps))


def _tensor_l2(T: SymTensorField) -> float:
    grid = T.grid
    total = 0.0
    for (a, b) in _sym_index(grid.n):
        wt = 1.0 if a == b else 2.0
        total += wt * grid_lp(T.comp(a, b), 2.0, grid) ** 2
    return math.sqrt(total)


def remove_trace(A: SymTensorField, cache: GeometryCache) -> SymTensorField:
    """Subtract the metric trace part of a contravariant symmetric tensor.

    Returns A - (tr A / n) g^{-1}, whose metric trace vanishes to
    rounding.  The operation is idempotent and leaves an already
    trace-free tensor unchanged.
    """
    grid = A.grid
    if grid != cache.grid:
        raise DomainError("tensor grid does not match the cache grid")
    tr = np.einsum("...ab,...ab->...", cache.metric, _full_matrix(A))
    frac = tr / grid.n
    comps = tuple(A.comp(a, b) - frac * cache.inverse[..., a, b]
                  for (a, b) in _sym_index(grid.n))
    return SymTensorField(grid, comps)


def tt_project_flat(A: SymTensorField) -> SymTensorField:
    """Spectral transverse-traceless projection in the flat metric.

    Every nonzero Fourier mode is projected with P = I - khat khat^T via
    P A P - (1/2) P tr(P A); the zero mode, where no transverse direction
    exists, keeps only its trace-free part.  Output is divergence-free
    and trace-free to rounding in the flat metric.
    """
    grid = A.grid
    if grid.n != 3:
        raise DomainError("transverse projection is three-dimensional")
    ks = grid.wavenumbers(real_last=True)
    k2 = sum(np.asarray(k) ** 2 for k in ks)
    norm = np.sqrt(np.where(k2 > 0.0, k2, 1.0))
    khat = [np.asarray(k) / norm for k in ks]

    spec = {}
    for (a, b) in _sym_index(3):
        spec[(a, b)] = rfftn(A.comp(a, b))

    def p(a, b):
        base = 1.0 if a == b else 0.0
        return base - khat[a] * khat[b]

    def h(a, b):
        return spec[(a, b) if a <= b else (b, a)]

    # trace of P A, reused by every output component
    pa_trace = None
    for c in range(3):
        for d in range(3):
            term = p(c, d) * h(c, d)
            pa_trace = term if pa_trace is None else pa_trace + term

    trace0 = sum(h(c, c)[(0,) * 3] for c in range(3))
    out = []
    for (a, b) in _sym_index(3):
        acc = None
        for c in range(3):
            for d in range(3):
                term = p(a, c) * p(b, d) * h(c, d)
                acc = term if acc is None else acc + term
        acc -= 0.5 * p(a, b) * pa_trace
        # zero mode: rank-3 trace removal instead of the rank-2 projector
        acc[(0,) * 3] = h(a, b)[(0,) * 3] - (trace0 / 3.0 if a == b else 0.0)
        out.append(irfftn(acc, grid.shape))
    return SymTensorField(grid, tuple(out))


# ---------------------------------------------------------------------------
# vector operators built from a geometry cache


def conformal_killing(cache: GeometryCache, W: VectorField) -> SymTensorField:
    """Trace-free symmetrized covariant gradient of a vector field.

    (K W)^{ab} = grad^a W^b + grad^b W^a - (2/3) g^{ab} div W.  The 2/3
    trace weight is what makes the metric trace vanish identically in
    three dimensions; it also makes the covariant divergence of the
    output equal to the Killing-type vector Laplacian of W.
    """
    grid = W.grid
    if grid != cache.grid:
        raise DomainError("vector grid does not match the cache grid")
    if grid.n != 3:
        raise DomainError("conformal Killing operator is three-dimensional")
    n = grid.n
    # T[..., d, b] = partial_d W^b + Gamma^b_{de} W^e
    T = np.empty(grid.shape + (n, n))
    for b, comp in enumerate(W.components):
        for d, dvals in enumerate(gradient(comp, grid)):
            T[..., d, b] = dvals
    for b in range(n):
        for d in range(n):
            for e in range(n):
                T[..., d, b] += cache.christoffel[..., b, d, e] \
                    * W.components[e]
    div = np.zeros(grid.shape)
    for d in range(n):
        div += T[..., d, d]
    up = np.einsum("...ad,...db->...ab", cache.inverse, T)
    comps = []
    for (a, b) in _sym_index(n):
        vals = up[..., a, b] + up[..., b, a] \
            - (2.0 / 3.0) * cache.inverse[..., a, b] * div
        comps.append(vals)
    return SymTensorField(grid, tuple(comps))


class _KillingCoefficients:
    """Precomputed coefficient blocks of the cache's vector Laplacian.

    Splits lap_g W + (1/3) grad_g(div_g W) + Ric W into the flat
    constant-coefficient part plus a deviation whose coefficient arrays
    all vanish identically on a flat cache.  The deviation is what the
    preconditioned momentum solve iterates on; the full operator is kept
    for residual diagnostics and manufactured sources.
    """

    def __init__(self, cache: GeometryCache):
        grid = cache.grid
        if grid.n != 3:
            raise DomainError("vector operator is three-dimensional")
        self.grid = grid
        self.inverse = cache.inverse
        self.contracted = cache.contracted
        n = grid.n
        christ = cache.christoffel
        ginv = cache.inverse
        self.dev_inv = ginv - np.eye(n)
        # drift^f = g^{cd} Gamma^f_{cd}
        self.drift = np.einsum("...cd,...fcd->...f", ginv, christ)
        # G1[..., b, e, d] = g^{cd} Gamma^b_{ce}
        self.g1 = np.einsum("...cd,...bce->...bed", ginv, christ)
        # zero order: g^{cd} d_c Gamma^b_{de} + g^{cd} Gam^b_{cf} Gam^f_{de}
        #             - drift^f Gam^b_{fe} + g^{bc} Ric_{ce}
        c0 = np.einsum("...cd,...bcf,...fde->...be", ginv, christ, christ,
                       optimize=True)
        c0 -= np.einsum("...f,...bfe->...be", self.drift, christ)
        c0 += np.einsum("...bc,...ce->...be", ginv, cache.ricci)
        for b in range(n):
            for p in range(n):
                for q in range(p, n):
                    grads = gradient(christ[..., b, p, q], grid)
                    for c in range(n):
                        c0[..., b, q] += ginv[..., c, p] * grads[c]
                        if p != q:
                            c0[..., b, p] += ginv[..., c, q] * grads[c]
        self.c0 = c0
        self.trivial = (
            float(np.abs(self.dev_inv).max()) == 0.0
            and float(np.abs(christ).max()) == 0.0
            and float(np.abs(c0).max()) == 0.0)

    def _jets(self, comps):
        """Firsts and seconds of every component from one transform each."""
        grid = self.grid
        firsts = []
        seconds = []
        for c in comps:
            spec = rfftn(np.asarray(c))
            fs = []
            for a in range(grid.n):
                alpha = [0] * grid.n
                alpha[a] = 1
                fs.append(_derivative_field(spec, grid, tuple(alpha)))
            ss = {}
            for (a, b) in _sym_index(grid.n):
                alpha = [0] * grid.n
                alpha[a] += 1
                alpha[b] += 1
                ss[(a, b)] = _derivative_field(spec, grid, tuple(alpha))
            firsts.append(fs)
            seconds.append(ss)
        return firsts, seconds

    def _parts(self, comps, firsts, seconds, deviation_only: bool):
        grid = self.grid
        n = grid.n
        inv = self.dev_inv if deviation_only else self.inverse
        # div W and its gradient reuse the component jets
        grad_s0 = [np.zeros(grid.shape) for _ in range(n)]
        for a in range(n):
            for c in range(n):
                key = (c, a) if c <= a else (a, c)
                grad_s0[c] += seconds[a][key]
        s1 = np.zeros(grid.shape)
        for e in range(n):
            s1 += self.contracted[..., e] * comps[e]
        grad_s1 = gradient(s1, grid)
        out = []
        for b in range(n):
            acc = np.zeros(grid.shape)
            for (c, d) in _sym_index(n):
                wt = 1.0 if c == d else 2.0
                acc += wt * inv[..., c, d] * seconds[b][(c, d)]
            for e in range(n):
                for d in range(n):
                    acc += 2.0 * self.g1[..., b, e, d] * firsts[e][d]
            for d in range(n):
                acc -= self.drift[..., d] * firsts[b][d]
            for e in range(n):
                acc += self.c0[..., b, e] * comps[e]
            for c in range(n):
                acc += (inv[..., b, c] * grad_s0[c]
                        + self.inverse[..., b, c] * grad_s1[c]) / 3.0
            out.append(acc)
        return out

    def deviation(self, comps):
        """Operator minus its flat part; exactly zero on a flat cache."""
        if self.trivial:
            return [np.zeros(self.grid.shape) for _ in range(self.grid.n)]
        firsts, seconds = self._jets(comps)
        return self._parts(comps, firsts, seconds, deviation_only=True)

    def full(self, comps):
        """lap W + (1/3) grad(div W) + Ric W on raw component arrays."""
        firsts, seconds = self._jets(comps)
        return self._parts(comps, firsts, seconds, deviation_only=False)


def lichnerowicz_laplacian(cache: GeometryCache, W: VectorField) -> VectorField:
    """Killing-type vector Laplacian: lap W + (1/3) grad(div W) + Ric W.

    All derivatives are covariant in the cache metric.  Its covariant
    divergence identity with the trace-free symmetrized gradient,
    div(K W) = (this operator)(W), is the dual route the tests check.
    """
    grid = W.grid
    if grid != cache.grid:
        raise DomainError("vector grid does not match the cache grid")
    ops = _KillingCoefficients(cache)
    return VectorField(grid, tuple(ops.full(list(W.components))))


# ---------------------------------------------------------------------------
# momentum solve


def _near_kernel_suspected(converged: bool, history, w_norm: float,
                           free_scale: float) -> bool:
    """Stalled residual plus an outsized solution norm.

    The vector operator has no decaying kernel, so a genuine stall with
    a solution far above the free-space scale points at an approximate
    Killing direction of the supplied metric rather than at a bad
    right-hand side.
    """
    if converged or len(history) < 10:
        return False
    tail = max(history[-5:])
    stalled = tail > 0.5 * history[-10]
    return stalled and w_norm > 100.0 * max(free_scale, _TINY)


@dataclass(frozen=True)
class MomentumReport:
    """Vector solve product plus its certification numbers."""

    W: VectorField
    K_hat: SymTensorField
    iterations: int
    residual_history: tuple
    residual: float            # preconditioned formulation, relative
    operator_residual: float   # strong apply of the full operator
    divergence_residual: float  # |div K_hat + 8 pi j|_2 / |rhs|_2
    trace_defect: float        # |g_ab K_hat^ab|_2 / |K_hat|_2
    converged: bool
    kernel_warning: bool
    method: str
    stability_ratio: float | None = None

    def summary(self) -> str:
        lines = [
            f"method               {self.method}",
            f"iterations           {self.iterations}",
            f"relative residual    {self.residual:.3e}",
            f"operator residual    {self.operator_residual:.3e}",
            f"divergence defect    {self.divergence_residual:.3e}",
            f"trace defect         {self.trace_defect:.3e}",
            f"converged            {self.converged}",
        ]
        if self.kernel_warning:
            lines.append("near-kernel warning  True")
        if self.stability_ratio is not None:
            lines.append(f"stability ratio      {self.stability_ratio:.6g}")
        return "\n".join(lines)


def momentum_solve(cache: GeometryCache, A_hat: SymTensorField,
                   j_hat: VectorField, opts: SolveOptions | None = None,
                   spec: NormSpec | None = None) -> MomentumReport:
    """Repair the momentum defect of a trace-free tensor seed.

    Solves -(lap W + (1/3) grad div W + Ric W) = 8 pi j + div A for the
    vector W and returns K = A + (K W) together with the discrete
    divergence certificate |div K + 8 pi j| / |rhs|.  The solve is
    preconditioned by the flat free-space inverse, so on a flat cache it
    reduces to a single kernel convolution.  The tensor seed is used as
    given; remove its trace first if it has one.
    """
    opts = SolveOptions() if opts is None else opts
    grid = cache.grid
    if A_hat.grid != grid or j_hat.grid != grid:
        raise DomainError("seed grids do not match the cache grid")
    if grid.n != 3:
        raise DomainError("momentum solve is three-dimensional")
    spec = NormSpec(2.0, -1.0, 2.0) if spec is None else spec
    n = grid.n
    ref = ConstCoeffOp.vector_killing(n)

    a_zero = all(float(np.abs(c).max()) == 0.0 for c in A_hat.components)
    if a_zero:
        div_a = [np.zeros(grid.shape) for _ in range(n)]
    else:
        div_a = list(covariant_divergence(cache, A_hat).components)
    f_comps = [8.0 * math.pi * j + d
               for j, d in zip(j_hat.components, div_a)]
    f_norm = _vec_l2(f_comps, grid)

    def finish(w_comps, iterations, history, residual, converged, method,
               kernel_warning):
        W = VectorField(grid, tuple(w_comps))
        K = SymTensorField(grid, tuple(
            a + k for a, k in zip(A_hat.components,
                                  conformal_killing(cache, W).components)))
        op_res = 0.0
        div_res = 0.0
        if f_norm > 0.0:
            full = coeffs.full(list(w_comps))
            op_res = _vec_l2([-(fu) - fc for fu, fc in zip(full, f_comps)],
                             grid) / f_norm
            div_k = covariant_divergence(cache, K)
            div_res = _vec_l2(
                [d + 8.0 * math.pi * j
                 for d, j in zip(div_k.components, j_hat.components)],
                grid) / f_norm
        k_scale = _tensor_l2(K)
        tr = np.einsum("...ab,...ab->...", cache.metric, _full_matrix(K))
        tr_def = grid_lp(tr, 2.0, grid) / max(k_scale, _TINY)
        stability = None
        if opts.compute_stability and f_norm > 0.0:
            nu = math.sqrt(math.fsum(
                weighted_norm_dyadic(ScalarField(grid, c), spec).value ** 2
                for c in w_comps))
            shifted = NormSpec(spec.s - 2.0, spec.delta + 2.0, spec.p)
            nf = math.sqrt(math.fsum(
                weighted_norm_dyadic(ScalarField(grid, c), shifted).value ** 2
                for c in f_comps))
            stability = nu / nf if nf > 0.0 else math.inf
        return MomentumReport(
            W=W, K_hat=K, iterations=iterations,
            residual_history=tuple(history), residual=residual,
            operator_residual=op_res, divergence_residual=div_res,
            trace_defect=tr_def, converged=converged,
            kernel_warning=kernel_warning, method=opts.method,
            stability_ratio=stability)

    coeffs = _KillingCoefficients(cache)
    if f_norm == 0.0:
        zeros = [np.zeros(grid.shape) for _ in range(n)]
        return finish(zeros, 0, (), 0.0, True, opts.method, False)

    def m_apply(comps):
        out = const_inverse(ref, VectorField(grid, tuple(comps)))
        return list(out.components)

    def split(flat):
        arr = flat.reshape((n,) + grid.shape)
        return [arr[i] for i in range(n)]

    def join(comps):
        return np.concatenate([np.asarray(c).ravel() for c in comps])

    if opts.preconditioner == "none":
        def composed(comps):
            full = coeffs.full(comps)
            return [-(v) for v in full]
    else:
        def composed(comps):
            dev = coeffs.deviation(m_apply(comps))
            return [c - d for c, d in zip(comps, dev)]

    f_flat = join(f_comps)
    history: list = []

    if coeffs.trivial and opts.preconditioner == "const":
        v_comps = f_comps
        iterations = 1
        history.append(0.0)
    elif opts.method == "picard":
        v_comps = [np.zeros(grid.shape) for _ in range(n)]
        iterations = 0
        for iterations in range(1, opts.maxiter + 1):
            if opts.preconditioner == "none":
                raise ConfigurationError(
                    "picard iteration needs the const preconditioner")
            dev = coeffs.deviation(m_apply(v_comps))
            new = [fc + d for fc, d in zip(f_comps, dev)]
            step = _vec_l2([a - b for a, b in zip(new, v_comps)],
                           grid) / f_norm
            v_comps = new
            history.append(step)
            if step <= opts.rtol:
                break
    else:
        size = n * int(np.prod(grid.shape))
        operator = LinearOperator(
            (size, size), matvec=lambda x: join(composed(split(x))))

        def track(res):
            history.append(float(res))

        v_flat, info = gmres(
            operator, f_flat, rtol=opts.rtol, atol=0.0,
            restart=opts.restart, maxiter=max(1, opts.maxiter // opts.restart),
            callback=track, callback_type="pr_norm")
        v_comps = split(v_flat)
        iterations = len(history)
        if info != 0 and not history:
            raise SolverError("Krylov breakdown before first iteration",
                              history)

    if opts.preconditioner == "none":
        w_comps = v_comps
    else:
        w_comps = m_apply(v_comps)
    residual = _vec_l2([a - b for a, b in zip(composed(v_comps), f_comps)],
                       grid) / f_norm
    converged = residual <= 10.0 * opts.rtol
    if not converged and residual > 1e3 * opts.rtol:
        raise SolverError(
            f"vector solve stalled at relative residual {residual:.3e} "
            f"after {iterations} iterations", history)
    free_scale = _vec_l2(m_apply(f_comps), grid)
    kernel_warning = _near_kernel_suspected(
        converged, history, _vec_l2(w_comps, grid), free_scale)
    if kernel_warning:
        warnings.warn(
            "residual stagnation with an outsized solution norm suggests "
            "an approximate Killing direction of the supplied metric",
            RuntimeWarning, stacklevel=2)
    return finish(w_comps, iterations, history, residual, converged,
                  opts.method, kernel_warning)


# ---------------------------------------------------------------------------
# conformal factor continuation


@dataclass(frozen=True)
class LichnerowiczReport:
    """Conformal factor and the continuation trace that produced it."""

    phi: ScalarField
    continuation: ContinuationReport
    min_phi: float
    matter_density: ScalarField     # 2 pi z, the alpha = 3 coefficient
    curvature_density: ScalarField  # |K|^2 / 8, the alpha = 7 coefficient

    def summary(self) -> str:
        return (f"conformal factor: min {self.min_phi:.12f}\n"
                + self.continuation.summary())


def lichnerowicz_solve(cache: GeometryCache, z_hat: ScalarField,
                       K_hat: SymTensorField,
                       opts: ContinuationOptions | None = None,
                       ) -> LichnerowiczReport:
    """Conformal factor phi = 1 + u from the scalar constraint.

    Solves -lap_g u = 2 pi z (1+u)^-3 + (|K|_g^2 / 8) (1+u)^-7 by the
    barrier-respecting continuation; both coefficient densities are
    nonnegative, so accepted states keep u >= -tol_mp and the factor
    stays above 1 - tol_mp.  Any scalar curvature the cache metric still
    carries is left out of the equation and lands in the certified
    Hamiltonian defect of the caller.
    """
    opts = ContinuationOptions() if opts is None else opts
    grid = cache.grid
    if z_hat.grid != grid or K_hat.grid != grid:
        raise DomainError("source grids do not match the cache grid")
    z_vals = z_hat.values
    floor = -1e-12 * max(1.0, float(np.abs(z_vals).max()))
    if float(z_vals.min()) < floor:
        raise PreconditionError(
            f"energy density must be nonnegative; min {z_vals.min():.6e}")
    z_vals = np.maximum(z_vals, 0.0)

    kmat = _full_matrix(K_hat)
    mixed = np.einsum("...ac,...cb->...ab", kmat, cache.metric)
    ksq = np.einsum("...ab,...ba->...", mixed, mixed)
    # |K|^2 is a metric norm; tiny negative values are rounding dust
    ksq = np.maximum(ksq, 0.0)

    matter = ScalarField(grid, 2.0 * math.pi * z_vals)
    curvature = ScalarField(grid, 0.125 * ksq)
    rhs = SemilinearRHS((power_term(3.0, matter), power_term(7.0, curvature)))
    a0 = ScalarField(grid, np.zeros(grid.shape))
    rep = solve_semilinear(cache, a0, rhs, opts)
    phi = ScalarField(grid, 1.0 + rep.u.values)
    return LichnerowiczReport(
        phi=phi, continuation=rep, min_phi=float(phi.values.min()),
        matter_density=matter, curvature_density=curvature)


# ---------------------------------------------------------------------------
# fluid variable change


def _check_point_metric(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (3, 3) or not np.isfinite(g).all():
        raise DomainError("point metric must be a finite 3 x 3 matrix")
    return g


def makino_forward(state: FluidState, g: np.ndarray, eos: EOS) -> tuple:
    """Map a fluid state to the constraint source pair (a, b).

    a = w (1 + c q)^exponent with c = 1 + kappa w^2 is the energy density
    power, and b = c sqrt(1 + q) / (1 + c q) times the spatial velocity
    is the momentum-per-energy vector; the pair is what the constraint
    sources expose and what ``makino_invert`` reconstructs from.
    """
    g = _check_point_metric(g)
    if not isinstance(eos, EOS):
        eos = EOS(*eos)
    w, q = state.w, state.q
    d = np.asarray(state.direction, dtype=float)
    if q > 0.0:
        gnorm = float(d @ g @ d)
        if abs(gnorm - 1.0) > 1e-6:
            raise DomainError(
                f"direction must be metric-unit; |dir|_g^2 = {gnorm:.8f}")
    u = math.sqrt(q) * d
    c = 1.0 + eos.kappa * w * w
    big_d = 1.0 + c * q
    a = w * big_d ** eos.exponent
    b = (c * math.sqrt(1.0 + q) / big_d) * u
    return float(a), b


def _invert_core(a, v, eos: EOS, w0=None, q0=None, max_iter: int = 50,
                 ftol: float = 1e-13):
    """Vectorized damped Newton inversion of the fluid variable change.

    Solves w (1+cq)^e = a and c^2 q (1+q) = v^2 (1+cq)^2 for (w, q) with
    w, q >= 0, starting from (a, v^2) unless a warm start is supplied.
    Returns (w, q, converged, singular, iters); ``singular`` marks rows
    whose Jacobian degenerated, the signature of leaving the invertible
    branch.
    """
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    e = eos.exponent
    kap = eos.kappa
    V = v * v
    w = np.array(a if w0 is None else w0, dtype=float, copy=True)
    q = np.array(V if q0 is None else q0, dtype=float, copy=True)
    # rows with a = 0 sit at the exact vacuum branch point
    if w0 is None:
        rest = a == 0.0
        if rest.any():
            w = np.where(rest, 0.0, w)
            q = np.where(rest, V / np.maximum(1.0 - V, _TINY), q)

    shape = a.shape
    active = np.ones(shape, dtype=bool)
    singular = np.zeros(shape, dtype=bool)
    iters = np.zeros(shape, dtype=int)

    def residuals(wv, qv):
        c = 1.0 + kap * wv * wv
        big_d = 1.0 + c * qv
        growth = c * c * qv * (1.0 + qv)
        f1 = wv * np.power(big_d, e) - a
        f2 = growth - V * big_d * big_d
        return c, big_d, growth, f1, f2

    for it in range(max_iter):
        c, big_d, growth, f1, f2 = residuals(w, q)
        tol1 = ftol * np.maximum(1.0, np.abs(a))
        tol2 = ftol * np.maximum(1.0, np.abs(growth) + V * big_d * big_d)
        done = (np.abs(f1) <= tol1) & (np.abs(f2) <= tol2)
        active &= ~done
        if not active.any():
            break
        iters = np.where(active, it + 1, iters)
        de = np.power(big_d, e - 1.0)
        j11 = de * (big_d + 2.0 * e * kap * w * w * q)
        j12 = w * e * de * c
        j21 = 4.0 * kap * w * q * (c * (1.0 + q) - V * big_d)
        j22 = c * (c * (1.0 + 2.0 * q) - 2.0 * V * big_d)
        det = j11 * j22 - j12 * j21
        scale = (np.abs(j11) + np.abs(j12)) * (np.abs(j21) + np.abs(j22))
        bad = active & (np.abs(det) <= 1e-14 * (scale + _TINY))
        singular |= bad
        active &= ~bad
        if not active.any():
            break
        safe_det = np.where(np.abs(det) > _TINY, det, 1.0)
        dw = (j22 * f1 - j12 * f2) / safe_det
        dq = (j11 * f2 - j21 * f1) / safe_det
        merit = f1 * f1 + f2 * f2
        lam = np.ones(shape)
        accepted = ~active
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(26):
                tw = w - lam * dw
                tq = q - lam * dq
                _, _, _, t1, t2 = residuals(np.maximum(tw, 0.0),
                                            np.maximum(tq, 0.0))
                mt = t1 * t1 + t2 * t2
                ok = (~accepted & (tw >= 0.0) & (tq >= 0.0)
                      & np.isfinite(mt)
                      & (mt <= merit * (1.0 - 1e-4 * lam) + _TINY))
                w = np.where(ok, tw, w)
                q = np.where(ok, tq, q)
                accepted |= ok
                if accepted.all():
                    break
                lam = np.where(accepted, lam, 0.5 * lam)
        # rows whose merit cannot decrease sit at a fold of the branch
        active &= accepted

    c, big_d, growth, f1, f2 = residuals(w, q)
    tol1 = ftol * np.maximum(1.0, np.abs(a))
    tol2 = ftol * np.maximum(1.0, np.abs(growth) + V * big_d * big_d)
    converged = (np.abs(f1) <= tol1) & (np.abs(f2) <= tol2) & ~singular
    return w, q, converged, singular, iters


def makino_invert(a: float, b, g: np.ndarray, eos: EOS) -> FluidState:
    """Reconstruct the fluid state from the source pair (a, b).

    The speed v = |b|_g must be below 1 (else SuperluminalDataError) and
    the density power a must sit inside the invertible branch for that
    speed (else AdmissibilityError; compare a with ``s_oracle(v, eos)``).
    Inversion is a damped Newton iteration warm-started at (a, v^2).
    """
    g = _check_point_metric(g)
    if not isinstance(eos, EOS):
        eos = EOS(*eos)
    if not (isinstance(a, (int, float)) and math.isfinite(a)):
        raise DomainError(f"density power must be finite, got {a}")
    if a < 0.0:
        raise DomainError(f"density power must be >= 0, got {a}")
    b = np.asarray(b, dtype=float)
    if b.shape != (3,) or not np.isfinite(b).all():
        raise DomainError("momentum-per-energy must be a finite 3-vector")
    v2 = float(b @ g @ b)
    v = math.sqrt(max(v2, 0.0))
    if v >= 1.0:
        raise SuperluminalDataError(
            f"causal speed |b|_g = {v:.6f} is not below 1")
    if v == 0.0:
        return FluidState(w=float(a), q=0.0, direction=(0.0, 0.0, 0.0))
    direction = tuple(float(x) for x in b / v)
    if a == 0.0:
        return FluidState(w=0.0, q=v2 / (1.0 - v2), direction=direction)
    w, q, ok, sing, iters = _invert_core(
        np.array([a]), np.array([v]), eos)
    if not bool(ok[0]):
        raise AdmissibilityError(
            f"fluid reconstruction failed at a = {a:.6e}, v = {v:.6f} "
            f"after {int(iters[0])} iterations; the pair lies outside the "
            f"invertible branch (compare a with s_oracle(v, eos))")
    return FluidState(w=float(w[0]), q=float(q[0]), direction=direction)


# ---------------------------------------------------------------------------
# admissibility bound table


@dataclass(frozen=True)
class AdmissibilityTable:
    """Brute-force fold boundary of the fluid variable change.

    ``bound[i]`` is the largest density power a whose inversion at speed
    ``v[i]`` stays on the continuous branch; rows that never fold below
    the scan ceiling are reported capped (v = 0 always is).  The
    ``monotone`` flag records whether the uncapped part is nonincreasing
    in v; it is a diagnostic, not an assertion.
    """

    gamma: float
    kappa: float
    v: np.ndarray
    bound: np.ndarray
    ceiling: float
    capped: np.ndarray
    monotone: bool

    @property
    def table_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.gamma!r}:{self.kappa!r}:{self.ceiling!r}".encode())
        h.update(np.ascontiguousarray(self.v).tobytes())
        h.update(np.ascontiguousarray(self.bound).tobytes())
        return h.hexdigest()


_TABLE_CACHE: dict = {}


def admissibility_table(eos: EOS, samples: int = 512,
                        ceiling: float = 1e6) -> AdmissibilityTable:
    """March-and-bisect scan of the invertible branch per speed sample.

    For each of ``samples`` speeds in [0, 1) the density power is marched
    up from 0 with warm-started Newton continuation (growing steps,
    branch-jump rejection) until the inversion fails, then the fold is
    bisected to near machine width.  Rows reaching ``ceiling`` are capped
    and flagged.  Tables are cached per (eos, samples, ceiling).
    """
    if not isinstance(eos, EOS):
        eos = EOS(*eos)
    if samples < 2:
        raise ConfigurationError("table needs at least 2 speed samples")
    if not ceiling > 0.0:
        raise ConfigurationError("scan ceiling must be positive")
    key = (eos.gamma, eos.kappa, samples, ceiling)
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]

    v = np.arange(samples) / float(samples)
    V = v * v
    bound = np.full(samples, ceiling)
    capped = np.zeros(samples, dtype=bool)
    capped[0] = True  # v = 0 never folds; only the ceiling stops the scan

    # branch state, exact at a = 0
    w = np.zeros(samples)
    q = V / np.maximum(1.0 - V, _TINY)
    a = np.zeros(samples)
    hi = np.full(samples, np.nan)
    step = np.full(samples, 0.01)
    marching = np.ones(samples, dtype=bool)
    marching[0] = False

    def jump(tw, tq):
        return ((np.abs(tw - w) > 0.5 * (1.0 + np.abs(w)))
                | (np.abs(tq - q) > 0.5 * (1.0 + np.abs(q))))

    guard = 0
    while marching.any() and guard < 5000:
        guard += 1
        a_try = np.minimum(a + step, ceiling)
        tw, tq, ok, _, _ = _invert_core(a_try, v, eos, w0=w, q0=q,
                                        max_iter=25, ftol=1e-12)
        good = marching & ok & ~jump(tw, tq)
        w = np.where(good, tw, w)
        q = np.where(good, tq, q)
        a = np.where(good, a_try, a)
        hit = good & (a >= ceiling)
        capped |= hit
        marching &= ~hit
        failed = marching & ~good
        hi = np.where(failed, a_try, hi)
        marching &= ~failed
        step = np.where(good, step * 1.7, step)

    bracketed = np.isfinite(hi)
    for _ in range(80):
        act = bracketed & (hi - a > 1e-13 * np.maximum(1.0, np.abs(a)))
        if not act.any():
            break
        mid = np.where(act, 0.5 * (a + hi), a)
        tw, tq, ok, _, _ = _invert_core(mid, v, eos, w0=w, q0=q,
                                        max_iter=25, ftol=1e-12)
        good = act & ok & ~jump(tw, tq)
        w = np.where(good, tw, w)
        q = np.where(good, tq, q)
        a = np.where(good, mid, a)
        hi = np.where(act & ~good, mid, hi)

    bound = np.where(capped, ceiling, a)
    free = np.where(~capped)[0]
    monotone = True
    if free.size > 1:
        diffs = np.diff(bound[free])
        slack = 1e-8 * np.maximum(1.0, np.abs(bound[free][:-1]))
        monotone = bool(np.all(diffs <= slack))
    table = AdmissibilityTable(
        gamma=eos.gamma, kappa=eos.kappa, v=v, bound=bound,
        ceiling=ceiling, capped=capped, monotone=monotone)
    _TABLE_CACHE[key] = table
    return table


def s_oracle(v: float, eos: EOS) -> float:
    """Admissibility bound at speed v, interpolated from the scan table.

    Returns the largest density power a that ``makino_invert`` accepts at
    that speed; at v = 0 the branch never folds and the returned value is
    the scan ceiling of the table.
    """
    if not (isinstance(v, (int, float)) and math.isfinite(v)):
        raise DomainError(f"speed must be finite, got {v}")
    if v < 0.0:
        raise DomainError(f"speed must be nonnegative, got {v}")
    if v >= 1.0:
        raise SuperluminalDataError(f"speed {v} is not below 1")
    table = admissibility_table(eos)
    return float(np.interp(v, table.v, table.bound))


# ---------------------------------------------------------------------------
# free data and assembled data containers


@dataclass(frozen=True)
class FreeData:
    """Seed data for the constraint pipeline.

    ``g_bar`` and ``A_bar`` are the metric seed and the contravariant
    tensor seed given alongside it; ``z_hat`` and ``j_hat`` are the
    matter densities, given in the scalar-flattened frame the pipeline
    produces in its first stage.  The tensor seed is projected, never
    rejected: its metric trace is removed exactly in stage 0 and its
    divergence defect is absorbed by the momentum solve, with both
    defects recorded in the run manifest.
    """

    g_bar: MetricData
    A_bar: SymTensorField
    z_hat: ScalarField
    j_hat: VectorField
    eos: EOS

    def __post_init__(self):
        grid = self.g_bar.grid
        if (self.A_bar.grid != grid or self.z_hat.grid != grid
                or self.j_hat.grid != grid):
            raise DomainError("free data fields live on different grids")
        if grid.n != 3:
            raise DomainError("constraint pipeline is three-dimensional")
        z = self.z_hat.values
        floor = -1e-12 * max(1.0, float(np.abs(z).max()))
        if float(z.min()) < floor:
            raise DomainError(
                f"energy density must be nonnegative; min {z.min():.6e}")
        if not isinstance(self.eos, EOS):
            object.__setattr__(self, "eos", EOS(*self.eos))

    def seed_defects(self, cache: GeometryCache | None = None) -> dict:
        """Trace and divergence defects of the tensor seed, relative.

        The trace defect is measured against the Frobenius size of the
        seed; the divergence defect against the size of the seed's full
        derivative, so both are dimensionless.  Zero seed reports zeros.
        """
        if cache is None:
            cache = build_cache(self.g_bar)
        grid = self.g_bar.grid
        scale = _tensor_l2(self.A_bar)
        if scale == 0.0:
            return {"trace": 0.0, "divergence": 0.0}
        tr = np.einsum("...ab,...ab->...", cache.metric,
                       _full_matrix(self.A_bar))
        div = covariant_divergence(cache, self.A_bar)
        dscale_sq = 0.0
        for (x, y) in _sym_index(grid.n):
            wt = 1.0 if x == y else 2.0
            for dvals in gradient(self.A_bar.comp(x, y), grid):
                dscale_sq += wt * grid_lp(dvals, 2.0, grid) ** 2
        dscale = math.sqrt(dscale_sq)
        return {
            "trace": grid_lp(tr, 2.0, grid) / scale,
            "divergence": _vec_l2(div.components, grid) / max(dscale, _TINY),
        }


@dataclass(frozen=True)
class InitialDataSet:
    """Assembled constraint solution with its fluid fields and manifest."""

    g: MetricData
    K: SymTensorField
    z: ScalarField
    j: VectorField
    w: ScalarField
    u_tilde: VectorField
    u0: ScalarField
    phi: ScalarField
    phi1: ScalarField
    residuals: dict
    manifest: dict

    def __post_init__(self):
        grid = self.g.grid
        for f in (self.K, self.z, self.j, self.w, self.u_tilde, self.u0,
                  self.phi, self.phi1):
            if f.grid != grid:
                raise DomainError("data set fields live on different grids")


@dataclass(frozen=True)
class AssembleOptions:
    """Stage controls for the constraint pipeline."""

    yamabe: YamabeSpec = YamabeSpec()
    flatten: FlattenOptions = FlattenOptions()
    linear: SolveOptions = SolveOptions(compute_stability=False)
    continuation: ContinuationOptions = ContinuationOptions()
    ham_tol: float = 1e-3
    mom_tol: float = 1e-3
    vacuum_floor: float = 1e-12

    def __post_init__(self):
        if not (self.ham_tol > 0.0 and self.mom_tol > 0.0):
            raise ConfigurationError("certification tolerances must be "
                                     "positive")
        if not 0.0 < self.vacuum_floor < 1.0:
            raise ConfigurationError("vacuum floor must lie in (0, 1)")


@contextmanager
def _stage(k: int, name: str):
    """Re-raise any stage failure with the stage number and name."""
    try:
        yield
    except Exception as exc:
        note = f"stage {k} ({name}): {exc}"
        try:
            wrapped = type(exc)(note)
        except TypeError:
            wrapped = RuntimeError(note)
        raise wrapped from exc


def assemble(free: FreeData,
             opts: AssembleOptions | None = None) -> InitialDataSet:
    """Run the seven-stage constraint pipeline on a free data set.

    Stages: (0) project the tensor seed trace, (1) scalar-flatten the
    metric seed, (2) rescale the seed tensor, (3) momentum solve,
    (4) conformal-factor continuation, (5) physical rescaling,
    (6) nodewise fluid reconstruction, (7) weighted defect
    certification.  Every stage appends its numbers to the manifest;
    failures re-raise tagged with the stage that produced them.
    """
    opts = AssembleOptions() if opts is None else opts
    grid = free.g_bar.grid
    eos = free.eos
    stages: list = []
    manifest = {
        "grid": {"n": grid.n, "N": grid.N, "L": grid.L},
        "eos": {"gamma": eos.gamma, "kappa": eos.kappa},
        "stages": stages,
    }

    with _stage(0, "seed projection"):
        cache_bar = build_cache(free.g_bar)
        defects = free.seed_defects(cache_bar)
        A_tf = remove_trace(free.A_bar, cache_bar)
        tr_after = np.einsum("...ab,...ab->...", cache_bar.metric,
                             _full_matrix(A_tf))
        scale = max(_tensor_l2(A_tf), _TINY)
        stages.append({
            "stage": 0, "name": "seed projection",
            "trace_defect_before": defects["trace"],
            "divergence_defect": defects["divergence"],
            "trace_defect_after": grid_lp(tr_after, 2.0, grid) / scale,
        })

    with _stage(1, "scalar flattening"):
        phi1, g_hat, flat_rep = conformal_flatten(
            cache_bar, opts.yamabe, opts.flatten)
        stages.append({
            "stage": 1, "name": "scalar flattening",
            "curvature_before": flat_rep.curvature_before,
            "curvature_after": flat_rep.curvature_after,
            "steps": len(flat_rep.lam_path),
            "halvings": flat_rep.halvings,
            "min_phi1": float(phi1.values.min()),
            "gate_estimate": flat_rep.estimate,
        })
    del cache_bar

    with _stage(2, "seed rescaling"):
        A_hat = conformal_transform(A_tf, phi1, "extrinsic")
        cache_hat = build_cache(g_hat)
        stages.append({
            "stage": 2, "name": "seed rescaling",
            "seed_norm": _tensor_l2(A_hat),
        })

    with _stage(3, "momentum solve"):
        mom = momentum_solve(cache_hat, A_hat, free.j_hat, opts.linear)
        stages.append({
            "stage": 3, "name": "momentum solve",
            "iterations": mom.iterations,
            "residual": mom.residual,
            "divergence_residual": mom.divergence_residual,
            "trace_defect": mom.trace_defect,
            "converged": mom.converged,
            "kernel_warning": mom.kernel_warning,
        })

    with _stage(4, "conformal factor"):
        lich = lichnerowicz_solve(cache_hat, free.z_hat, mom.K_hat,
                                  opts.continuation)
        stages.append({
            "stage": 4, "name": "conformal factor",
            "min_phi": lich.min_phi,
            "max_phi": float(lich.phi.values.max()),
            "steps": len(lich.continuation.path),
            "halvings": lich.continuation.halvings,
            "residual": lich.continuation.residual,
        })
    del cache_hat

    with _stage(5, "physical rescaling"):
        phi = lich.phi
        g = conformal_transform(g_hat, phi, "metric")
        K = conformal_transform(mom.K_hat, phi, "extrinsic")
        z = conformal_transform(ScalarField(grid, np.maximum(
            free.z_hat.values, 0.0)), phi, "energy")
        j = conformal_transform(free.j_hat, phi, "momentum")
        cache_g = build_cache(g)
        stages.append({
            "stage": 5, "name": "physical rescaling",
            "phi_spread": float(phi.values.max() - phi.values.min()),
        })

    with _stage(6, "fluid reconstruction"):
        table = admissibility_table(eos)
        z_vals = z.values
        z_max = float(z_vals.max())
        jmat = np.stack(j.components, axis=-1)
        jn2 = np.einsum("...ab,...a,...b->...", cache_g.metric, jmat, jmat)
        jn2 = np.maximum(jn2, 0.0)
        jn = np.sqrt(jn2)
        j_max = float(jn.max())
        if z_max <= 0.0:
            fluid = np.zeros(grid.shape, dtype=bool)
        else:
            fluid = z_vals > opts.vacuum_floor * z_max
        vac_j = float(jn[~fluid].max()) if (~fluid).any() else 0.0
        if vac_j > math.sqrt(opts.vacuum_floor) * max(j_max, _TINY):
            idx = np.argmax(np.where(fluid, -1.0, jn))
            node = np.unravel_index(idx, grid.shape)
            raise SuperluminalDataError(
                "momentum density persists where the energy density "
                f"vanishes; |j|/z is unbounded near node "
                f"{tuple(int(i) for i in node)}")
        w_vals = np.zeros(grid.shape)
        q_vals = np.zeros(grid.shape)
        dir_vals = np.zeros(grid.shape + (3,))
        margin = math.inf
        max_speed = 0.0
        newton_iters = 0
        if fluid.any():
            zf = z_vals[fluid]
            af = np.power(zf, eos.exponent)
            vf = jn[fluid] / zf
            max_speed = float(vf.max())
            if max_speed >= 1.0:
                k = int(np.argmax(vf))
                node = np.unravel_index(np.where(fluid.ravel())[0][k],
                                        grid.shape)
                raise SuperluminalDataError(
                    f"causal speed |j|_g / z reaches {max_speed:.6f} at "
                    f"node {tuple(int(i) for i in node)}")
            margin = float(np.min(np.interp(vf, table.v, table.bound) - af))
            wf, qf, ok, _, it_arr = _invert_core(af, vf, eos)
            if not ok.all():
                bad = int((~ok).sum())
                k = int(np.argmax(~ok))
                node = np.unravel_index(np.where(fluid.ravel())[0][k],
                                        grid.shape)
                raise AdmissibilityError(
                    f"fluid reconstruction failed at {bad} nodes; first at "
                    f"{tuple(int(i) for i in node)} with a = {af[k]:.6e}, "
                    f"v = {vf[k]:.6f}")
            newton_iters = int(it_arr.max())
            w_vals[fluid] = wf
            q_vals[fluid] = qf
            moving = fluid & (jn > 0.0)
            scale = np.where(moving, jn, 1.0)
            for i in range(3):
                dir_vals[..., i] = np.where(moving, jmat[..., i] / scale, 0.0)
        w_field = ScalarField(grid, w_vals)
        u_tilde = VectorField(grid, tuple(
            np.sqrt(q_vals) * dir_vals[..., i] for i in range(3)))
        u0 = ScalarField(grid, np.sqrt(1.0 + q_vals))
        stages.append({
            "stage": 6, "name": "fluid reconstruction",
            "fluid_nodes": int(fluid.sum()),
            "max_speed": max_speed,
            "admissibility_margin": margin,
            "newton_iterations": newton_iters,
            "table_hash": table.table_hash,
        })

    with _stage(7, "certification"):
        data = InitialDataSet(
            g=g, K=K, z=z, j=j, w=w_field, u_tilde=u_tilde, u0=u0,
            phi=phi, phi1=phi1, residuals={}, manifest=manifest)
        ham, mom_res = constraint_residual(data, cache_g)
        object.__setattr__(data, "residuals",
                           {"hamiltonian": ham, "momentum": mom_res})
        stages.append({
            "stage": 7, "name": "certification",
            "hamiltonian": ham,
            "momentum": mom_res,
            "ham_tol": opts.ham_tol,
            "mom_tol": opts.mom_tol,
            "passed": bool(ham <= opts.ham_tol and mom_res <= opts.mom_tol),
        })
    return data


def constraint_residual(data: InitialDataSet,
                        cache: GeometryCache | None = None) -> tuple:
    """Weighted norms of the Hamiltonian and momentum defects.

    The scalar defect is R(g) - K_ab K^ab + (tr K)^2 - 16 pi z and the
    vector defect is div K^a - grad^a(tr K) + 8 pi j^a; both are measured
    in the weighted discrete L2 norm with weight power delta + 2, the
    class where the constraint sources live.
    """
    if cache is None:
        cache = build_cache(data.g)
    grid = data.g.grid
    if cache.grid != grid:
        raise DomainError("cache grid does not match the data grid")
    kmat = _full_matrix(data.K)
    klow = np.einsum("...ac,...bd,...cd->...ab", cache.metric, cache.metric,
                     kmat, optimize=True)
    ksq = np.einsum("...ab,...ab->...", klow, kmat)
    trk = np.einsum("...ab,...ab->...", cache.metric, kmat)
    ham_vals = (cache.scalar.values - ksq + trk * trk
                - 16.0 * math.pi * data.z.values)
    div_k = covariant_divergence(cache, data.K)
    dtr = gradient(trk, grid)
    delta_w = data.g.spec.delta + 2.0
    ham = weighted_lp(ScalarField(grid, ham_vals), 2.0, delta_w)
    mom_sq = 0.0
    for b in range(grid.n):
        up = np.zeros(grid.shape)
        for c in range(grid.n):
            up += cache.inverse[..., b, c] * dtr[c]
        vals = (div_k.components[b] - up
                + 8.0 * math.pi * data.j.components[b])
        mom_sq += weighted_lp(ScalarField(grid, vals), 2.0, delta_w) ** 2
    return ham, math.sqrt(mom_sq)

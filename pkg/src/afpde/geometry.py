"""Single-end asymptotically flat metric model.

A metric is stored as its deviation ``h`` from the Euclidean one,
``g_ab = delta_ab + h_ab``, together with the weighted class the deviation
is claimed to live in.  ``build_cache`` differentiates the metric
spectrally and assembles the inverse, the Christoffel symbols, the Ricci
tensor, the scalar curvature, and the volume density; everything
downstream (Laplace-Beltrami, manifold norms and pairings, conformal
rescalings) reads from that cache.

The manifold model has one asymptotic end and a compact core: the core is
the ball {|x| <= r0} and the exterior chart is the identity, so manifold
norms reduce to a weighted exterior term plus an unweighted core term
glued by a two-region partition of unity.

Tensor layout: nodewise tensors are ndarrays with trailing index axes,
``metric[..., a, b]``, ``christoffel[..., c, a, b]`` for Gamma^c_ab.  The
symmetric-component accessors convert to ``SymTensorField`` for
serialization; ``write_aff`` handles each cache field per component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import _smoothstep
from .errors import (
    ConfigurationError,
    DegenerateMetricError,
    DomainError,
    PositivityLossError,
)
from .fields import (
    GridSpec,
    ScalarField,
    SymTensorField,
    VectorField,
    compensated_sum,
    gradient,
    rfftn,
)
from .norms import NormSpec, _derivative_field, besov_norm, weighted_norm_dyadic

__all__ = [
    "GeometryCache",
    "MetricData",
    "RegionSplit",
    "build_cache",
    "conformal_transform",
    "covariant_divergence",
    "flat_metric",
    "laplace_beltrami",
    "manifold_norm",
    "pairing_Mg",
]


def _sym_index(n: int):
    return [(a, b) for a in range(n) for b in range(a, n)]


def _assemble_matrix(h: SymTensorField) -> np.ndarray:
    """Nodewise g_ab = delta_ab + h_ab with trailing index axes."""
    grid = h.grid
    n = grid.n
    g = np.empty(grid.shape + (n, n))
    for a in range(n):
        for b in range(n):
            g[..., a, b] = h.comp(a, b)
        g[..., a, a] += 1.0
    return g


def _eigen_range(gmat: np.ndarray, n: int):
    """Extremal eigenvalues over all nodes, with the argmin node."""
    eig = np.linalg.eigvalsh(gmat.reshape(-1, n, n))
    lo_flat = int(np.argmin(eig[:, 0]))
    return float(eig[:, 0].min()), float(eig[:, -1].max()), lo_flat


@dataclass(frozen=True)
class MetricData:
    """Metric deviation plus the weighted class it is claimed to lie in.

    Uniform equivalence to the Euclidean metric is the defining invariant:
    every nodewise eigenvalue of g must stay inside [lam_min, lam_max],
    an interval that contains 1.  Construction fails loudly on the worst
    node otherwise.
    """

    h: SymTensorField
    spec: NormSpec
    lam_min: float = 1e-3
    lam_max: float = 1e3

    def __post_init__(self):
        if not 0.0 < self.lam_min <= 1.0 <= self.lam_max < math.inf:
            raise ConfigurationError(
                "eigenvalue bounds must satisfy 0 < lam_min <= 1 <= lam_max, "
                f"got [{self.lam_min}, {self.lam_max}]"
            )
        grid = self.h.grid
        gmat = _assemble_matrix(self.h)
        lo, hi, lo_flat = _eigen_range(gmat, grid.n)
        if lo < self.lam_min or hi > self.lam_max:
            node = np.unravel_index(lo_flat, grid.shape)
            raise DegenerateMetricError(
                f"metric eigenvalues [{lo:.6g}, {hi:.6g}] leave the uniform "
                f"equivalence window [{self.lam_min:g}, {self.lam_max:g}]; "
                f"worst node {tuple(int(i) for i in node)}"
            )
        object.__setattr__(self, "_eig_lo", lo)
        object.__setattr__(self, "_eig_hi", hi)

    @property
    def grid(self) -> GridSpec:
        return self.h.grid

    @property
    def eigen_range(self) -> tuple:
        return (self._eig_lo, self._eig_hi)

    def metric_values(self) -> np.ndarray:
        return _assemble_matrix(self.h)

    def class_diagnostic(self) -> dict:
        """Weighted norm of each deviation component in the claimed class.

        Finiteness plus the truncation flags is diagnostic, not proof: the
        box only sees the claimed decay out to its own radius.
        """
        grid = self.grid
        reports = {}
        for (a, b) in _sym_index(grid.n):
            f = ScalarField(grid, self.h.comp(a, b))
            reports[(a, b)] = weighted_norm_dyadic(f, self.spec)
        return {
            "component_norms": {k: r.value for k, r in reports.items()},
            "finite": all(math.isfinite(r.value) for r in reports.values()),
            "truncated": any(r.truncated for r in reports.values()),
        }


def flat_metric(grid: GridSpec, spec: NormSpec | None = None) -> MetricData:
    if spec is None:
        spec = NormSpec(2.0, -1.0, 2.0)
    return MetricData(SymTensorField.zeros(grid), spec)


@dataclass(frozen=True)
class GeometryCache:
    """Metric derivatives and curvature, immutable after build."""

    grid: GridSpec
    metric: np.ndarray       # g_ab
    inverse: np.ndarray      # g^ab
    christoffel: np.ndarray  # Gamma^c_ab, axes [..., c, a, b]
    contracted: np.ndarray   # Gamma^c_cb, axes [..., b]
    ricci: np.ndarray        # R_ab
    scalar: ScalarField      # R(g)
    sqrt_det: ScalarField    # sqrt|g|
    identity_defect: float   # max |g^ac g_cb - delta| over nodes

    def _sym_field(self, arr: np.ndarray) -> SymTensorField:
        comps = tuple(arr[..., a, b] for (a, b) in _sym_index(self.grid.n))
        return SymTensorField(self.grid, comps)

    def inverse_field(self) -> SymTensorField:
        return self._sym_field(self.inverse)

    def ricci_field(self) -> SymTensorField:
        return self._sym_field(self.ricci)


def _tensor_gradient(comp_arrays, grid: GridSpec) -> np.ndarray:
    """d[..., c, i] = spectral d_c of component i."""
    m = len(comp_arrays)
    out = np.empty(grid.shape + (grid.n, m))
    for i, comp in enumerate(comp_arrays):
        for c, dvals in enumerate(gradient(comp, grid)):
            out[..., c, i] = dvals
    return out


def build_cache(g: MetricData) -> GeometryCache:
    """Differentiate the metric spectrally and assemble curvature.

    Christoffel symbols come out symmetric in the lower pair by
    construction (the derivative combination is symmetrized before the
    inverse-metric contraction).  Ricci follows the standard coordinate
    formula; no symbolic simplification is applied anywhere.
    """
    grid = g.grid
    n = grid.n
    pairs = _sym_index(n)
    gmat = _assemble_matrix(g.h)
    ginv = np.linalg.inv(gmat)
    eye = np.eye(n)
    defect = float(np.max(np.abs(
        np.einsum("...ac,...cb->...ab", ginv, gmat) - eye)))

    # dg[..., c, a, b] = d_c g_ab, built from the 6 unique components
    dcomp = _tensor_gradient([g.h.comp(a, b) for (a, b) in pairs], grid)
    dg = np.empty(grid.shape + (n, n, n))
    for i, (a, b) in enumerate(pairs):
        dg[..., :, a, b] = dcomp[..., :, i]
        if a != b:
            dg[..., :, b, a] = dcomp[..., :, i]
    del dcomp

    # Gamma^c_ab = (1/2) g^cd (d_a g_db + d_b g_da - d_d g_ab)
    sym = (np.einsum("...adb->...dab", dg)
           + np.einsum("...bda->...dab", dg)
           - dg)
    del dg
    gam = 0.5 * np.einsum("...cd,...dab->...cab", ginv, sym)
    del sym
    vec = np.einsum("...cca->...a", gam)

    # R_ab = d_c Gamma^c_ab - d_a Gamma^c_cb
    #        + Gamma^c_cd Gamma^d_ab - Gamma^c_ad Gamma^d_cb
    ricci = np.einsum("...d,...dab->...ab", vec, gam)
    ricci -= np.einsum("...cad,...dcb->...ab", gam, gam)
    for (a, b) in pairs:
        acc = np.zeros(grid.shape)
        for c in range(n):
            alpha = tuple(1 if i == c else 0 for i in range(n))
            spectrum = rfftn(np.ascontiguousarray(gam[..., c, a, b]))
            acc += _derivative_field(spectrum, grid, alpha)
        ricci[..., a, b] += acc
        if a != b:
            ricci[..., b, a] += acc
    for b in range(n):
        dv = gradient(np.ascontiguousarray(vec[..., b]), grid)
        for a in range(n):
            ricci[..., a, b] -= dv[a]

    scalar = np.einsum("...ab,...ab->...", ginv, ricci)
    sqrt_det = np.sqrt(np.linalg.det(gmat))
    return GeometryCache(
        grid=grid,
        metric=gmat,
        inverse=ginv,
        christoffel=gam,
        contracted=vec,
        ricci=ricci,
        scalar=ScalarField(grid, scalar),
        sqrt_det=ScalarField(grid, sqrt_det),
        identity_defect=defect,
    )


# ---------------------------------------------------------------------------
# operators on the cache


def _second_derivatives(u: ScalarField) -> dict:
    grid = u.grid
    spectrum = rfftn(u.values)
    out = {}
    for (a, b) in _sym_index(grid.n):
        alpha = [0] * grid.n
        alpha[a] += 1
        alpha[b] += 1
        out[(a, b)] = _derivative_field(spectrum, grid, tuple(alpha))
    return out


def laplace_beltrami(cache: GeometryCache, u: ScalarField) -> ScalarField:
    """g^ab d_a d_b u - g^ab Gamma^c_ab d_c u with spectral derivatives."""
    grid = u.grid
    if grid != cache.grid:
        raise DomainError("field grid does not match the cache grid")
    n = grid.n
    second = _second_derivatives(u)
    first = gradient(u.values, grid)
    out = np.zeros(grid.shape)
    for (a, b) in _sym_index(n):
        w = 1.0 if a == b else 2.0
        out += w * cache.inverse[..., a, b] * second[(a, b)]
    drift = np.einsum("...ab,...cab->...c", cache.inverse, cache.christoffel)
    for c in range(n):
        out -= drift[..., c] * first[c]
    return ScalarField(grid, out)


def _laplace_divergence_form(cache: GeometryCache, u: ScalarField) -> ScalarField:
    # expanded-divergence route: g^ab d_ab u + (d_b g^ab) d_a u
    # + (1/2) g^cd (d_b g_cd) g^ab d_a u; agrees with the Christoffel
    # contraction analytically, kept as a cross-check
    grid = u.grid
    n = grid.n
    second = _second_derivatives(u)
    first = gradient(u.values, grid)
    out = np.zeros(grid.shape)
    for (a, b) in _sym_index(n):
        w = 1.0 if a == b else 2.0
        out += w * cache.inverse[..., a, b] * second[(a, b)]
    dginv = _tensor_gradient(
        [np.ascontiguousarray(cache.inverse[..., a, b]) for (a, b) in _sym_index(n)],
        grid,
    )
    idx = {p: i for i, p in enumerate(_sym_index(n))}
    logdet = gradient(np.log(cache.sqrt_det.values), grid)
    for a in range(n):
        coeff = np.zeros(grid.shape)
        for b in range(n):
            key = (a, b) if a <= b else (b, a)
            coeff += dginv[..., b, idx[key]]
            coeff += cache.inverse[..., a, b] * logdet[b]
        out += coeff * first[a]
    return ScalarField(grid, out)


def covariant_divergence(cache: GeometryCache, T: SymTensorField) -> VectorField:
    """div(T)^b = d_a T^ab + Gamma^a_ac T^cb + Gamma^b_ac T^ac for a
    contravariant symmetric 2-tensor."""
    grid = T.grid
    if grid != cache.grid:
        raise DomainError("tensor grid does not match the cache grid")
    n = grid.n
    pairs = _sym_index(n)
    dT = _tensor_gradient([T.comp(a, b) for (a, b) in pairs], grid)
    idx = {p: i for i, p in enumerate(pairs)}

    def comp_d(c, a, b):
        key = (a, b) if a <= b else (b, a)
        return dT[..., c, idx[key]]

    out = []
    for b in range(n):
        acc = np.zeros(grid.shape)
        for a in range(n):
            acc += comp_d(a, a, b)
            acc += cache.contracted[..., a] * T.comp(a, b)
            for c in range(n):
                acc += cache.christoffel[..., b, a, c] * T.comp(a, c)
        out.append(acc)
    return VectorField(grid, tuple(out))


# ---------------------------------------------------------------------------
# two-region split, manifold norm, pairing


@dataclass(frozen=True)
class RegionSplit:
    """Core/exterior partition: chi_core = 1 on {|x| <= r0}, supported in
    {|x| <= 2 r0}, quintic transition, chi_core + chi_ext = 1 exactly."""

    grid: GridSpec
    r0: float | None = None
    chi_core: np.ndarray = field(init=False, repr=False)
    chi_ext: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r0 = self.grid.L / 4.0 if self.r0 is None else float(self.r0)
        if not 0.0 < 2.0 * r0 <= self.grid.L:
            raise DomainError(
                f"core transition [{r0:g}, {2 * r0:g}] must fit inside the "
                f"box (half-width {self.grid.L:g})"
            )
        r = self.grid.radius()
        core = 1.0 - _smoothstep(r / r0 - 1.0)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "chi_core", core)
        object.__setattr__(self, "chi_ext", 1.0 - core)

    def quadrature_weights(self) -> tuple:
        """Squared-normalized pair (w_core, w_ext) with w_core^2 + w_ext^2
        = 1; makes the two-region pairing collapse exactly."""
        norm = np.sqrt(self.chi_core**2 + self.chi_ext**2)
        return self.chi_core / norm, self.chi_ext / norm


def manifold_norm(u: ScalarField, spec: NormSpec,
                  split: RegionSplit | None = None) -> float:
    """Weighted norm of the exterior piece plus unweighted Besov norm of
    the core piece."""
    if spec.s < 0:
        raise DomainError("direct manifold norm needs s >= 0")
    grid = u.grid
    if split is None:
        split = RegionSplit(grid)
    if split.grid != grid:
        raise DomainError("split grid does not match the field grid")
    ext = weighted_norm_dyadic(u.with_values(split.chi_ext * u.values), spec)
    core = besov_norm(u.with_values(split.chi_core * u.values), spec.s, spec.p)
    return ext.value + core


def pairing_Mg(u, v, cache: GeometryCache, *, split: RegionSplit | None = None,
               literal: bool = False) -> float:
    """Metric volume pairing <sqrt|g| u, v>.

    Scalar inputs pair as integral(u v sqrt|g|); vector inputs contract
    with the metric first.  The production route collapses to the plain
    grid integral because the squared-normalized partition weights sum to
    one; literal=True runs the two-region sum (weighted-dyadic pairing on
    the exterior, plain L2 on the core) explicitly.
    """
    from .norms import pairing_W

    grid = cache.grid
    if u.grid != grid or v.grid != grid:
        raise DomainError("pairing requires the cache grid")
    if isinstance(u, VectorField) and isinstance(v, VectorField):
        # lower one index with the metric, then pair componentwise
        sides = []
        for b in range(grid.n):
            lowered = np.zeros(grid.shape)
            for a in range(grid.n):
                lowered += cache.metric[..., a, b] * u.components[a]
            sides.append((lowered, v.components[b]))
    elif isinstance(u, ScalarField) and isinstance(v, ScalarField):
        sides = [(u.values, v.values)]
    else:
        raise DomainError("pairing needs two scalar fields or two vector fields")

    root = cache.sqrt_det.values
    if not literal:
        total = [compensated_sum(lv * rv * root) * grid.cell_volume
                 for lv, rv in sides]
        return math.fsum(total)
    if split is None:
        split = RegionSplit(grid)
    w_core, w_ext = split.quadrature_weights()
    total = []
    for lv, rv in sides:
        ext_term = pairing_W(ScalarField(grid, w_ext * root * lv),
                             ScalarField(grid, w_ext * rv))
        core_term = compensated_sum(
            (w_core * root * lv) * (w_core * rv)) * grid.cell_volume
        total.append(ext_term + core_term)
    return math.fsum(total)


# ---------------------------------------------------------------------------
# conformal rescalings


_CONFORMAL_EXPONENTS = {
    "metric": 4,
    "extrinsic": -10,
    "energy": -8,
    "momentum": -10,
}


def conformal_transform(obj, phi: ScalarField, exponent_role: str):
    """Pointwise power rescaling by the conformal factor.

    Roles fix the exponent for three dimensions: metric +4, extrinsic
    curvature -10, energy density -8, momentum density -10.  The metric
    role returns a revalidated MetricData; the others scale the object's
    components in place.
    """
    role = str(exponent_role).lower()
    if role not in _CONFORMAL_EXPONENTS:
        raise ConfigurationError(
            f"unknown exponent role {exponent_role!r}; "
            f"choose from {sorted(_CONFORMAL_EXPONENTS)}"
        )
    grid = phi.grid
    if grid.n != 3:
        raise DomainError("conformal exponent table is three-dimensional")
    if np.any(phi.values <= 0.0):
        flat = int(np.argmin(phi.values))
        node = np.unravel_index(flat, grid.shape)
        raise PositivityLossError(
            f"conformal factor is not positive: min {phi.values.min():.6g} "
            f"at node {tuple(int(i) for i in node)}"
        )
    w = phi.values ** _CONFORMAL_EXPONENTS[role]

    if role == "metric":
        if not isinstance(obj, MetricData):
            raise DomainError("metric role expects MetricData")
        if obj.grid != grid:
            raise DomainError("conformal factor grid does not match")
        comps = []
        for (a, b) in _sym_index(grid.n):
            c = w * obj.h.comp(a, b)
            if a == b:
                c = c + (w - 1.0)
            comps.append(c)
        return MetricData(SymTensorField(grid, tuple(comps)), obj.spec,
                          obj.lam_min, obj.lam_max)
    if isinstance(obj, ScalarField):
        expected = "energy"
    elif isinstance(obj, VectorField):
        expected = "momentum"
    elif isinstance(obj, SymTensorField):
        expected = "extrinsic"
    else:
        raise DomainError(f"cannot rescale object of type {type(obj).__name__}")
    if role != expected:
        raise DomainError(f"{exponent_role!r} role does not accept "
                          f"{type(obj).__name__}")
    if obj.grid != grid:
        raise DomainError("conformal factor grid does not match")
    if isinstance(obj, ScalarField):
        return obj.with_values(w * obj.values)
    return type(obj)(grid, tuple(w * c for c in obj.components))

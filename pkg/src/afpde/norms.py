"""Weighted dyadic norms, classical norms, and duality pairings.

The weighted norm of smoothness s, weight exponent delta, integrability p
is assembled from spatial shell pieces:

    value^p = sum_j 2^((delta + n/p) p j) * || (psi_j u)_(2^j) ||_{B^s_{p,p}}^p

Each scaled piece (psi_j u)_(2^j) lives on a j-rescaled auxiliary grid
whose sample points are the preimages of the original lattice, so its
values are exactly the fine-grid samples of psi_j u and its Besov layers
are computed with dilated frequency annuli phi_k(2^j xi) on the original
spectrum.  Lp quadrature on the auxiliary grid is the fine-grid quadrature
times 2^(-jn); this change of variables is exact, not a discretization.

Two independent routes are kept deliberately separate: the dyadic route
above and the classical route (weighted derivative Lp sums plus, for
fractional smoothness, a stratified Monte Carlo estimate of the weighted
Gagliardo double integral).  Their ratio over a corpus is a measured
equivalence constant, never assumed.

The duality pairing collapses exactly on the grid: the annulus window
|l - m| <= 2 loses nothing because annuli two apart are disjoint, the
shell window |k - j| <= 2 loses nothing because shells three apart are
disjoint, and with the normalized partition the double sum telescopes to
the plain L2 product.  ``pairing_W(..., literal=True)`` evaluates the
windowed double sum anyway so the collapse is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dyadic import (
    FourierDyadic,
    SpatialDyadic,
    _compositions,
    build_fourier,
    build_spatial,
    default_spatial_jmax,
)
from .errors import ConfigurationError, DomainError
from .fields import (
    GridSpec,
    ScalarField,
    compensated_sum,
    grid_lp,
    irfftn,
    rfftn,
    weighted_lp,
)

__all__ = [
    "NormSpec",
    "NormReport",
    "DualBank",
    "besov_norm",
    "weighted_norm",
    "weighted_norm_dyadic",
    "weighted_norm_classical",
    "dyadic_norm_batch",
    "dual_norm_estimate",
    "make_test_bank",
    "pairing_W",
    "shell_scaling_check",
]

_METHODS = ("dyadic", "classical", "dual")


@dataclass(frozen=True)
class NormSpec:
    """Parameters (s, delta, p) of a weighted norm plus the route."""

    s: float
    delta: float
    p: float
    method: str = "dyadic"

    def __post_init__(self):
        if not 1.0 < self.p < math.inf:
            raise DomainError(f"p must lie in (1, inf), got {self.p}")
        if self.method not in _METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if self.method == "classical" and self.s < 0:
            raise DomainError(
                "classical route needs s >= 0; use the dual method for s < 0"
            )

    @property
    def conjugate_p(self) -> float:
        return self.p / (self.p - 1.0)


@dataclass(frozen=True)
class NormReport:
    """Norm value with its additive p-th power breakdown.

    For the dyadic route the breakdown has one entry per shell; for the
    classical route one entry per derivative multi-index plus one per
    Gagliardo term.  value**p == sum(breakdown) holds to rounding.
    """

    value: float
    method: str
    breakdown: tuple
    truncated: bool
    extras: dict | None = None


# ---------------------------------------------------------------------------
# shared spectral helpers


@lru_cache(maxsize=8)
def _parseval_weights(grid: GridSpec) -> np.ndarray:
    # multiplicity of half-spectrum modes: the last axis stores only
    # nonnegative frequencies; interior ones represent conjugate pairs
    nz = grid.N // 2 + 1
    w = np.full(nz, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    shape = (1,) * (grid.n - 1) + (nz,)
    return w.reshape(shape)


def _parseval_l2sq(spectrum: np.ndarray, grid: GridSpec) -> float:
    # integral of |w|^2 over the box from the unnormalized half-spectrum
    w = _parseval_weights(grid)
    total = compensated_sum(w * (spectrum.real**2 + spectrum.imag**2))
    return total * grid.cell_volume / grid.N**grid.n


def _families(grid, spatial, fourier):
    if spatial is None:
        spatial = build_spatial(default_spatial_jmax(grid))
    if fourier is None:
        fourier = build_fourier(grid)
    return spatial, fourier


def _coarse_size(B: float, grid: GridSpec, p_max: int) -> int | None:
    """Smallest power-of-two grid whose sampling sums |piece|^p exactly.

    The piece spectrum lies in |xi| <= B, so |piece|^p (p even) lies in
    |xi| <= p B; equal-weight sums on N_c points alias only frequencies
    that are nonzero multiples of N_c pi / L, hence exactness needs
    N_c pi / L > p B.
    """
    need = p_max * B * grid.L / math.pi
    nc = 16
    while nc <= need:
        nc *= 2
    return nc if nc < grid.N else None


def _coarse_values(spectrum: np.ndarray, grid: GridSpec, nc: int) -> np.ndarray:
    # restrict the fine half-spectrum to the coarse layout; boundary rows
    # are zero by the band limit, so no Hermitian fixup is needed
    half = nc // 2
    idx = np.concatenate([np.arange(half), grid.N - half + np.arange(half)])
    block = spectrum
    for axis in range(grid.n - 1):
        block = np.take(block, idx, axis=axis)
    sl = [slice(None)] * grid.n
    sl[-1] = slice(0, half + 1)
    block = np.ascontiguousarray(block[tuple(sl)])
    vals = irfftn(block, (nc,) * grid.n)
    return vals * (nc / grid.N) ** grid.n


def _power_sums(values: np.ndarray, cell: float, ps) -> dict:
    out = {}
    sq = values * values
    for p in ps:
        if p == 2:
            out[2] = compensated_sum(sq) * cell
        elif p == 4:
            out[4] = compensated_sum(sq * sq) * cell
        elif float(p).is_integer() and int(p) % 2 == 0:
            out[p] = compensated_sum(sq ** (int(p) // 2)) * cell
        else:
            out[p] = compensated_sum(np.abs(values) ** p) * cell
    return out


def _all_even(ps) -> bool:
    return all(float(p).is_integer() and int(p) % 2 == 0 for p in ps)


BAND_CEILING = 2


def _band_window(grid: GridSpec, band_ceiling: int) -> int:
    # widest aux band k - j whose support (up to 1.5 * 2^(k-j)) fits
    # inside the spectral ball every axis resolves
    fits = math.floor(math.log2(grid.nyquist / 1.5))
    return max(0, min(int(band_ceiling), fits))


def _piece_table(f: ScalarField, spatial: SpatialDyadic, fourier: FourierDyadic,
                 ps: tuple, band_ceiling: int = BAND_CEILING) -> dict:
    """Integrals of |Delta_k (psi_j f)|^p over the box, per (j, k, p).

    These are the only field-dependent ingredients of every dyadic norm:
    the (s, delta, p) weighting is pure arithmetic on top, so one table
    serves a whole batch of specs.

    The frequency index is truncated at a fixed offset, k <= j +
    band_ceiling, rather than at the grid's own Nyquist.  The shells'
    inner ramps put spectral mass well past what coarse grids resolve
    for small j; a grid-tied ceiling would make the functional grow
    under refinement as that mass comes into view.  With a fixed window
    every retained band lies inside the spectral ball of any grid with
    Nyquist >= 1.5 * 2^band_ceiling, so the same functional is computed
    at every such resolution and refinement changes it only through
    sampling (aliasing) error.  Grids too coarse for the requested
    window get it clamped to what they resolve.
    """
    grid = f.grid
    ps = tuple(sorted(set(float(p) for p in ps)))
    even = _all_even(ps)
    p_max = int(max(ps))
    xi = grid.wavenumber_radius(real_last=True)
    min_xi = math.pi / grid.L
    table = {}
    window = _band_window(grid, band_ceiling)
    for j in range(spatial.J_max + 1):
        w = spatial.shell(grid, j) * f.values
        if not np.any(w):
            continue
        spectrum = rfftn(w)
        k_hi = j + window
        for k in range(k_hi + 1):
            scale = 2.0**j
            B = 1.5 * 2.0 ** (k - j)
            if k >= 1 and B <= min_xi:
                continue  # annulus falls below the lowest nonzero mode
            mult = fourier.annulus(grid, k, scale=scale)
            masked = spectrum * mult
            if ps == (2.0,):
                table[(j, k)] = {2.0: _parseval_l2sq(masked, grid)}
                continue
            nc = _coarse_size(B, grid, p_max) if even else None
            if nc is not None:
                vals = _coarse_values(masked, grid, nc)
                cell = (2.0 * grid.L / nc) ** grid.n
            else:
                vals = irfftn(masked, grid.shape)
                cell = grid.cell_volume
            table[(j, k)] = _power_sums(vals, cell, ps)
    return table


def _assemble(table: dict, spec: NormSpec, grid: GridSpec,
              spatial: SpatialDyadic) -> NormReport:
    n = grid.n
    s, d, p = spec.s, spec.delta, float(spec.p)
    shells = {}
    for (j, k), sums in table.items():
        layer = 2.0 ** (k * s * p) * 2.0 ** (-j * n) * sums[p]
        shells.setdefault(j, []).append(layer)
    breakdown = []
    for j in range(spatial.J_max + 1):
        if j in shells:
            term = 2.0 ** ((d + n / p) * p * j) * math.fsum(shells[j])
        else:
            term = 0.0
        breakdown.append(term)
    total = math.fsum(breakdown)
    truncated = 2.0 ** (spatial.J_max + 1) > grid.L
    return NormReport(
        value=total ** (1.0 / p),
        method="dyadic",
        breakdown=tuple(breakdown),
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# public norms


def besov_norm(f: ScalarField, s: float, p: float,
               fourier: FourierDyadic | None = None) -> float:
    """Unweighted B^s_{p,p} norm from frequency annuli up to the Nyquist."""
    if not 1.0 < p < math.inf:
        raise DomainError(f"p must lie in (1, inf), got {p}")
    grid = f.grid
    _, fourier = _families(grid, None, fourier)
    spectrum = rfftn(f.values)
    layers = []
    for k in range(fourier.J_max + 1):
        masked = spectrum * fourier.annulus(grid, k)
        if p == 2:
            lp_p = _parseval_l2sq(masked, grid)
        else:
            vals = irfftn(masked, grid.shape)
            lp_p = _power_sums(vals, grid.cell_volume, (p,))[p]
        layers.append(2.0 ** (k * s * p) * lp_p)
    return math.fsum(layers) ** (1.0 / p)


def weighted_norm_dyadic(f: ScalarField, spec: NormSpec,
                         spatial: SpatialDyadic | None = None,
                         fourier: FourierDyadic | None = None,
                         band_ceiling: int = BAND_CEILING) -> NormReport:
    if spec.method != "dyadic":
        raise DomainError(f"spec method is {spec.method!r}, expected dyadic")
    spatial, fourier = _families(f.grid, spatial, fourier)
    table = _piece_table(f, spatial, fourier, (spec.p,), band_ceiling)
    return _assemble(table, spec, f.grid, spatial)


def dyadic_norm_batch(f: ScalarField, specs, spatial=None, fourier=None,
                      band_ceiling: int = BAND_CEILING) -> dict:
    """Norms for many (s, delta, p) specs from one shared piece table."""
    specs = tuple(specs)
    for spec in specs:
        if spec.method != "dyadic":
            raise DomainError("batch route accepts dyadic specs only")
    spatial, fourier = _families(f.grid, spatial, fourier)
    ps = tuple(sorted(set(float(s.p) for s in specs)))
    table = _piece_table(f, spatial, fourier, ps, band_ceiling)
    return {spec: _assemble(table, spec, f.grid, spatial) for spec in specs}


def weighted_norm(f: ScalarField, spec: NormSpec, **kwargs) -> NormReport:
    """Dispatch on spec.method; the dual route needs a bank via kwargs."""
    if spec.method == "dyadic":
        return weighted_norm_dyadic(f, spec, **kwargs)
    if spec.method == "classical":
        return weighted_norm_classical(f, spec, **kwargs)
    value = dual_norm_estimate(f, spec, **kwargs)
    return NormReport(value=value, method="dual", breakdown=(value**spec.p,),
                      truncated=False)


# ---------------------------------------------------------------------------
# classical route


def _derivative_field(spectrum: np.ndarray, grid: GridSpec,
                      alpha: tuple) -> np.ndarray:
    wav = grid.wavenumbers(real_last=True)
    mult = np.ones((), dtype=complex)
    for axis, order in enumerate(alpha):
        if order == 0:
            continue
        factor = (1j * wav[axis]) ** order
        # zero the unpaired Nyquist mode on every differentiated axis,
        # matching the first-derivative convention
        idx = [slice(None)] * grid.n
        idx[axis] = factor.shape[axis] - 1 if axis == grid.n - 1 else grid.N // 2
        factor[tuple(idx)] = 0.0
        mult = mult * factor
    return irfftn(spectrum * mult, grid.shape)


def weighted_norm_classical(f: ScalarField, spec: NormSpec,
                            n_pairs: int = 10**6, seed: int = 0) -> NormReport:
    """Derivative route: weighted Lp sums of d^a f for |a| <= m, plus a
    Monte Carlo weighted Gagliardo term per top-order index when s is
    fractional.  The MC half-width (1.96 sigma) is reported in extras."""
    if spec.s < 0:
        raise DomainError("classical route needs s >= 0; use the dual method")
    grid = f.grid
    m = int(math.floor(spec.s + 1e-12))
    lam = spec.s - m
    if lam < 1e-12:
        lam = 0.0
    spectrum = rfftn(f.values)
    alphas = [(0,) * grid.n]
    for total in range(1, m + 1):
        alphas.extend(_compositions(total, grid.n))
    breakdown = []
    top_fields = {}
    r = grid.radius()
    for alpha in alphas:
        vals = _derivative_field(spectrum, grid, alpha)
        order = sum(alpha)
        dfield = ScalarField(grid, vals)
        breakdown.append(weighted_lp(dfield, spec.p, spec.delta + order) ** spec.p)
        if order == m and lam > 0.0:
            top_fields[alpha] = (1.0 + r) ** (spec.delta + m + lam) * vals
    extras = {"s_integer_part": m, "s_fractional_part": lam}
    if lam > 0.0:
        half_sq = 0.0
        for i, (alpha, G) in enumerate(sorted(top_fields.items())):
            est, half = _gagliardo_mc(G, grid, lam, spec.p, n_pairs,
                                      seed + 1000 * i)
            breakdown.append(est)
            half_sq += half**2
        extras["mc_halfwidth"] = math.sqrt(half_sq)
        extras["mc_pairs"] = n_pairs
        extras["mc_seed"] = seed
    total = math.fsum(breakdown)
    return NormReport(
        value=total ** (1.0 / spec.p),
        method="classical",
        breakdown=tuple(breakdown),
        truncated=False,
        extras=extras,
    )


def _interp(values: np.ndarray, grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation; points outside the box evaluate to zero."""
    inside = np.all((pts >= -grid.L) & (pts < grid.L), axis=1)
    c = (pts + grid.L) / grid.dx
    i0 = np.floor(c).astype(np.int64)
    frac = c - i0
    out = np.zeros(len(pts))
    for corner in np.ndindex(*(2,) * grid.n):
        idx = tuple((i0[:, a] + corner[a]) % grid.N for a in range(grid.n))
        w = np.ones(len(pts))
        for a in range(grid.n):
            w *= frac[:, a] if corner[a] else 1.0 - frac[:, a]
        out += w * values[idx]
    return np.where(inside, out, 0.0)


def _gagliardo_mc(G: np.ndarray, grid: GridSpec, lam: float, p: float,
                  n_pairs: int, seed: int) -> tuple:
    """Stratified estimate of the weighted Gagliardo double integral.

    Pairs are drawn as x uniform in the box and y = x + r * omega with r
    log2-stratified on [dx, 2 L sqrt(n)]; with r = e^t the kernel
    |x-y|^(-n - lam p) and the volume element combine to r^(-lam p) dt.
    Separations below one cell are excluded (the sampled field carries no
    sub-cell oscillation) and beyond the last stratum the partner value is
    negligible for decaying fields, giving the closed tail term."""
    n = grid.n
    rng = np.random.default_rng(seed)
    sphere = 2.0 * math.pi if n == 2 else 4.0 * math.pi
    vol = (2.0 * grid.L) ** n
    r_lo = grid.dx
    r_hi = 2.0 * grid.L * math.sqrt(n)
    n_strata = max(1, math.ceil(math.log2(r_hi / r_lo)))
    per = max(1, n_pairs // n_strata)
    terms, variances = [], []
    for i in range(n_strata):
        t0 = math.log(r_lo) + i * math.log(2.0)
        t = t0 + rng.random(per) * math.log(2.0)
        radii = np.exp(t)
        x = rng.uniform(-grid.L, grid.L, size=(per, n))
        if n == 2:
            ang = rng.uniform(0.0, 2.0 * math.pi, per)
            omega = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:
            omega = rng.standard_normal((per, n))
            omega /= np.linalg.norm(omega, axis=1, keepdims=True)
        y = x + radii[:, None] * omega
        Gx = _interp(G, grid, x)
        Gy = _interp(G, grid, y)
        samples = np.abs(Gx - Gy) ** p * radii ** (-lam * p)
        mean = float(np.mean(samples))
        var = float(np.var(samples)) / per
        factor = vol * math.log(2.0) * sphere
        terms.append(factor * mean)
        variances.append(factor**2 * var)
    # beyond the last stratum the partner lies outside every decaying
    # field's support: |G(x)|^p integrates in closed form over r
    r_tail = r_lo * 2.0**n_strata
    gp = compensated_sum(np.abs(G) ** p) * grid.cell_volume
    tail = gp * sphere * r_tail ** (-lam * p) / (lam * p)
    estimate = math.fsum(terms) + tail
    halfwidth = 1.96 * math.sqrt(math.fsum(variances))
    return estimate, halfwidth


# ---------------------------------------------------------------------------
# duality


def pairing_W(u: ScalarField, v: ScalarField, *, literal: bool = False,
              spatial: SpatialDyadic | None = None,
              fourier: FourierDyadic | None = None) -> float:
    """Dyadic duality pairing.

    The production route is the collapsed form: with the normalized
    partition the shell window recovers sum_j Psi_j = 1 and the scaled
    L2 products undo their 2^(nj) weights exactly, leaving the plain grid
    L2 product.  literal=True runs the windowed double sum over shells
    and annuli instead; the two agree to rounding, which is the content
    of the collapse and is pinned by tests rather than assumed silently.
    """
    if u.grid != v.grid:
        raise DomainError("pairing requires a common grid")
    if not literal:
        return compensated_sum(u.values * v.values) * u.grid.cell_volume
    grid = u.grid
    spatial, fourier = _families(grid, spatial, fourier)
    weights = _parseval_weights(grid)
    scale_fft = grid.cell_volume / grid.N**grid.n
    u_hats = {}
    v_hats = {}
    for j in range(spatial.J_max + 1):
        part = spatial.partition(grid, j)
        u_hats[j] = rfftn(part * u.values)
        v_hats[j] = rfftn(part * v.values)
    total = []
    for j in range(spatial.J_max + 1):
        # inner form on the j-rescaled grid: annulus layers paired within
        # the |l - m| <= 2 window
        k_hi = fourier.J_max + j
        mults = [fourier.annulus(grid, l, scale=2.0**j)
                 for l in range(k_hi + 1)]
        cross = np.zeros(u_hats[j].shape)
        for l in range(k_hi + 1):
            for mm in range(max(0, l - 2), min(k_hi, l + 2) + 1):
                cross += mults[l] * mults[mm]
        for k in range(max(0, j - 2), min(spatial.J_max, j + 2) + 1):
            inner = compensated_sum(
                weights * cross
                * (u_hats[j].real * v_hats[k].real
                   + u_hats[j].imag * v_hats[k].imag)
            ) * scale_fft
            # 2^{nj} pairing weight times the 2^{-nj} of the rescaled
            # quadrature cancel exactly
            total.append(inner)
    return math.fsum(total)


def _bump_bank_fields(grid: GridSpec, size: int, seed: int,
                      nonneg: bool) -> list:
    from .dyadic import _g_profile

    rng = np.random.default_rng(seed)
    X = grid.coords()
    fields = []
    for _ in range(size):
        c = rng.uniform(-grid.L / 2, grid.L / 2, grid.n)
        width = rng.uniform(0.5, 0.25 * grid.L)
        amp = rng.uniform(0.2, 2.0)
        if not nonneg and rng.random() < 0.5:
            amp = -amp
        r = np.sqrt(sum((x - ci) ** 2 for x, ci in zip(X, c)))
        vals = amp * _g_profile(r / width)
        if rng.random() < 0.5:
            kvec = rng.uniform(-1.5, 1.5, grid.n)
            mod = rng.uniform(0.0, 0.9)
            phase = sum(k * x for k, x in zip(kvec, X))
            vals = vals * (1.0 + mod * np.cos(phase))
        fields.append(np.ascontiguousarray(np.broadcast_to(vals, grid.shape)))
    return fields


@dataclass(frozen=True)
class DualBank:
    """Smooth compactly supported fields with precomputed dual-side norms."""

    grid: GridSpec
    spec: NormSpec
    fields: tuple
    norms: tuple
    nonneg: bool


_BANK_CACHE: dict = {}


def make_test_bank(grid: GridSpec, spec: NormSpec, size: int = 200,
                   seed: int = 0, nonneg: bool = False) -> DualBank:
    """Bank for dual estimates of a spec with s < 0: members carry their
    W^{p'}_{-s,-delta} norms, computed once by the dyadic route."""
    if size < 1:
        raise ConfigurationError("test bank must contain at least one field")
    key = (grid, spec.s, spec.delta, spec.p, size, seed, nonneg)
    if key in _BANK_CACHE:
        return _BANK_CACHE[key]
    dual_spec = NormSpec(s=-spec.s, delta=-spec.delta, p=spec.conjugate_p)
    fields = _bump_bank_fields(grid, size, seed, nonneg)
    norms = []
    for vals in fields:
        report = weighted_norm_dyadic(ScalarField(grid, vals), dual_spec)
        norms.append(report.value)
    bank = DualBank(grid=grid, spec=spec, fields=tuple(fields),
                    norms=tuple(norms), nonneg=nonneg)
    _BANK_CACHE[key] = bank
    return bank


def dual_norm_estimate(f: ScalarField, spec: NormSpec,
                       bank: DualBank | None = None, size: int = 200,
                       seed: int = 0, nonneg: bool = False) -> float:
    """Certified lower bound on the s < 0 norm: the best pairing against a
    bank of smooth compactly supported fields of unit dual norm."""
    if spec.s >= 0:
        raise DomainError("dual estimate is for s < 0 specs")
    if bank is None:
        bank = make_test_bank(f.grid, spec, size=size, seed=seed,
                              nonneg=nonneg)
    if len(bank.fields) == 0:
        raise ConfigurationError("empty test bank")
    if bank.grid != f.grid:
        raise DomainError("bank grid does not match field grid")
    best = 0.0
    for vals, norm in zip(bank.fields, bank.norms):
        if norm <= 0.0:
            continue
        pairing = abs(pairing_W(f, ScalarField(f.grid, vals)))
        best = max(best, pairing / norm)
    return best


# ---------------------------------------------------------------------------
# scaling identity


def shell_scaling_check(f: ScalarField, j: int, p: float,
                        spatial: SpatialDyadic | None = None,
                        n_spot: int = 32, seed: int = 0) -> dict:
    """Verify the change-of-variables identity for one shell piece.

    The rescaled piece's Lp norm is computed on its own grid, the fine
    norm on the original; the exact identity predicts ratio 1.  The aux
    samples are additionally spot-checked against a direct evaluation of
    the trigonometric interpolant of psi_j f at the scaled points, so
    the resampling step is exercised rather than assumed.
    """
    grid = f.grid
    if spatial is None:
        spatial = build_spatial(default_spatial_jmax(grid))
    w = spatial.shell(grid, j) * f.values
    aux_grid = GridSpec(n=grid.n, L=grid.L * 2.0 ** (-j), N=grid.N)
    aux = ScalarField(aux_grid, w)
    lhs = grid_lp(aux.values, p, aux_grid) ** p
    rhs = 2.0 ** (-j * grid.n) * grid_lp(w, p, grid) ** p
    # direct interpolant evaluation at a few scaled aux points
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, grid.N**grid.n, size=n_spot)
    idx = np.unravel_index(flat, grid.shape)
    pts_aux = np.stack([aux_grid.axis()[idx[a]] for a in range(grid.n)], axis=1)
    pts_fine = 2.0**j * pts_aux
    spectrum = np.fft.fftn(w)
    freqs = [2.0 * math.pi * np.fft.fftfreq(grid.N, d=grid.dx)
             for _ in range(grid.n)]
    direct = np.zeros(n_spot)
    for m in range(n_spot):
        # evaluate sum_k w_hat(k) e^{i k (x + L)} / M one axis at a time;
        # the +L shift anchors the DFT phases at index 0
        vecs = [np.exp(1j * freqs[a] * (pts_fine[m, a] + grid.L))
                for a in range(grid.n)]
        val = spectrum
        for a in range(grid.n):
            val = np.tensordot(val, vecs[a], axes=([0], [0]))
        direct[m] = (val / grid.N**grid.n).real
    spot = np.asarray([aux.values[tuple(ix[m] for ix in idx)]
                       for m in range(n_spot)])
    spot_err = float(np.max(np.abs(direct - spot))) / max(
        1e-300, float(np.max(np.abs(w))))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "ratio": lhs / rhs if rhs else math.nan,
        "interpolant_spot_error": spot_err,
    }

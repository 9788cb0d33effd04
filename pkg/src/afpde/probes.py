"""Empirical stress tests of the weighted-norm inequalities.

Each probe realizes one continuity estimate of the weighted-space
calculus (derivative loss, smooth multipliers, cutoff decay transfer,
sup-norm embedding, products, fractional powers, composition) as a
corpus sweep: both sides of the inequality are computed with the dyadic
norm engine and the ratio LHS / RHS, constant dropped, is recorded per
corpus element.  A finite, refinement-stable ratio distribution is the
pass signal.  Probes never certify an estimate; they catch scaling bugs
in the norm layer, where a wrong weight power shows up as a ratio that
blows up on tail-heavy fields or drifts under grid refinement.

Corpus members are continuum closures rather than grid arrays, so the
same element can be sampled at several resolutions; the stability flag
compares per-field ratios between the working grid and a refined grid.

Probe parameters are checked against the hypotheses of the underlying
estimate before anything is computed; a violation raises
PreconditionError naming the failed hypothesis instead of producing a
meaningless ratio.

The cutoff probe reports a fitted decay exponent.  The rate at which
weight can be transferred between decay indices delta and delta' on the
far field is the slope of log(tail norm at delta' / tail norm at delta)
against log R; this is the quantity whose exponent equals -(delta -
delta') for any field with nonzero tail mass, and it is insensitive to
the field's own decay rate and to box-corner anisotropy, which cancel
between the two norms.  The raw decay of the delta'-norm alone mixes in
the field's tail exponent and is reported only as a diagnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dyadic import _compositions, _g_profile, _smoothstep
from .errors import ConfigurationError, DomainError, PreconditionError
from .fields import GridSpec, ScalarField, spectral_derivative, weighted_lp
from .norms import NormSpec, dyadic_norm_batch

__all__ = [
    "PROBE_NAMES",
    "CorpusField",
    "ProbeReport",
    "ProbeSession",
    "analytic_corpus",
    "probe_inequality",
]

PROBE_NAMES = (
    "derivative",
    "smooth-multiplier",
    "cutoff-decay",
    "embedding",
    "product",
    "triple-product",
    "fractional-power",
    "moser",
    "zero-order",
)

_ALIASES = {
    "embedding-cbeta": "embedding",
    "embedding-cb": "embedding",
    "zero-order-lebesgue": "zero-order",
}


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class CorpusField:
    """A continuum test function; ``sample`` evaluates it on any grid."""

    name: str
    kind: str
    profile: Callable

    def sample(self, grid: GridSpec) -> ScalarField:
        values = np.asarray(self.profile(grid.coords()), dtype=np.float64)
        values = np.broadcast_to(values, grid.shape).copy()
        return ScalarField(grid, values)


def _gaussian(center, width, amp):
    def profile(coords):
        q = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
        return amp * np.exp(-q / width**2)

    return profile


def _bump(center, width, amp):
    def profile(coords):
        q = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
        return amp * _g_profile(np.sqrt(q) / width)

    return profile


def _algebraic(center, width, k, amp):
    def profile(coords):
        q = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
        return amp * (1.0 + q / width**2) ** (-k)

    return profile


def _trig_noise(box, modes, amps, phases, env_width, env_pow):
    # wavenumber quantum of the sampling box, so every mode is periodic
    k0 = math.pi / box

    def profile(coords):
        q = sum(c * c for c in coords)
        envelope = (1.0 + q / env_width**2) ** (-env_pow)
        wave = 0.0
        for m, a, th in zip(modes, amps, phases):
            phase = th
            for c, mi in zip(coords, m):
                phase = phase + (k0 * mi) * c
            wave = wave + a * np.cos(phase)
        return envelope * wave

    return profile


def analytic_corpus(count: int = 50, seed: int = 0, box: float = 16.0,
                    n: int = 3) -> tuple[CorpusField, ...]:
    """Deterministic mix of Gaussians, compact bumps, algebraic tails and
    band-limited noise under a decaying envelope.

    Closures are exact functions of position, so one corpus element can
    be sampled at several resolutions for refinement studies.  All
    members are centered within box/8 of the origin and decay fast
    enough for weighted norms with delta <= 0; noise wavevectors are
    integer multiples of the box quantum, hence exactly periodic.
    """
    if count < 1:
        raise ConfigurationError("corpus needs at least one field")
    rng = np.random.default_rng(seed)
    kinds = ("gaussian", "bump", "algebraic", "noise")
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        center = tuple(rng.uniform(-box / 8.0, box / 8.0, size=n))
        amp = float(rng.uniform(0.5, 2.0) * rng.choice((-1.0, 1.0)))
        if kind == "gaussian":
            profile = _gaussian(center, float(rng.uniform(0.8, 2.4)), amp)
        elif kind == "bump":
            profile = _bump(center, float(rng.uniform(1.5, box / 4.0)), amp)
        elif kind == "algebraic":
            width = float(rng.uniform(1.0, 2.0))
            k = float(rng.choice((1.0, 1.5, 2.0, 3.0)))
            profile = _algebraic(center, width, k, amp)
        else:
            modes = rng.integers(-6, 7, size=(5, n))
            modes[np.all(modes == 0, axis=1), 0] = 1
            amps = tuple(float(a) for a in rng.uniform(-1.0, 1.0, size=5) * abs(amp))
            phases = tuple(float(t) for t in rng.uniform(0.0, 2.0 * math.pi, size=5))
            env_w = float(rng.uniform(2.0, 4.0))
            env_p = float(rng.choice((1.0, 2.0)))
            profile = _trig_noise(box, [tuple(int(v) for v in m) for m in modes],
                                  amps, phases, env_w, env_p)
        out.append(CorpusField(name=f"{kind}{i:02d}", kind=kind, profile=profile))
    return tuple(out)


# ---------------------------------------------------------------------------
# shared norm cache


class ProbeSession:
    """Caches corpus samples and dyadic norms on one grid across probes.

    Requests for one derived field should arrive as a single ``norms``
    call listing every (s, delta, p) needed: the batch shares a single
    Littlewood-Paley piece table, and repeated calls for cached
    (key, spec) pairs are free.
    """

    def __init__(self, grid: GridSpec, spatial=None, fourier=None):
        self.grid = grid
        self._spatial = spatial
        self._fourier = fourier
        self._samples: dict[str, ScalarField] = {}
        self._norms: dict[tuple, float] = {}

    def sample(self, cf: CorpusField) -> ScalarField:
        field = self._samples.get(cf.name)
        if field is None:
            field = cf.sample(self.grid)
            self._samples[cf.name] = field
        return field

    def norm(self, key: str, field: ScalarField, spec: NormSpec) -> float:
        return self.norms(key, field, (spec,))[0]

    def norms(self, key: str, field: ScalarField, specs) -> list[float]:
        specs = tuple(specs)
        missing = tuple(s for s in set(specs) if (key, s) not in self._norms)
        if missing:
            reports = dyadic_norm_batch(field, missing, spatial=self._spatial,
                                        fourier=self._fourier)
            for s, report in reports.items():
                self._norms[(key, s)] = report.value
        return [self._norms[(key, s)] for s in specs]


# ---------------------------------------------------------------------------
# report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if callable(obj):
        return getattr(obj, "__name__", "callable")
    return obj


@dataclass(frozen=True)
class ProbeReport:
    """Outcome of one probe sweep; ``to_json`` gives the wire form."""

    name: str
    params: dict
    max_ratio: float
    quantiles: dict
    stability_flag: bool | None
    max_drift: float | None
    seeds: dict
    ratios: tuple
    extras: dict

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "params": _jsonable(self.params),
            "max_ratio": self.max_ratio,
            "quantiles": _jsonable(self.quantiles),
            "stability_flag": self.stability_flag,
            "max_drift": self.max_drift,
            "seeds": _jsonable(self.seeds),
            "ratios": [[label, value] for label, value in self.ratios],
            "extras": _jsonable(self.extras),
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def _quantiles(values) -> dict:
    arr = np.asarray(list(values), dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    if finite.size == 0:
        return {"q25": math.inf, "q50": math.inf, "q75": math.inf,
                "q90": math.inf, "max": math.inf}
    out = {f"q{q}": float(np.quantile(finite, q / 100.0)) for q in (25, 50, 75, 90)}
    out["max"] = float(arr.max())
    return out


def _ratio(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return 0.0 if num == 0.0 else math.inf


def _require(cond: bool, hypothesis: str, detail: str):
    if not cond:
        raise PreconditionError(f"hypothesis {hypothesis} violated: {detail}")


# ---------------------------------------------------------------------------
# probe implementations

# Each validator may raise PreconditionError (inequality hypothesis) or
# DomainError (geometric fit to the grid); each runner returns
# (ratios, extras) with ratios a list of (label, value).


def _validate_derivative(par, grid):
    pass  # the derivative estimate has no hypotheses beyond spec validity


def _run_derivative(sess, corpus, par):
    rhs_spec = NormSpec(par["s"], par["delta"], par["p"])
    lhs_spec = NormSpec(par["s"] - 1.0, par["delta"] + 1.0, par["p"])
    ratios = []
    for cf in corpus:
        u = sess.sample(cf)
        den = sess.norm(cf.name, u, rhs_spec)
        num = 0.0
        for axis in range(sess.grid.n):
            du = spectral_derivative(u, axis)
            num = max(num, sess.norm(f"{cf.name}|d{axis}", du, lhs_spec))
        ratios.append((cf.name, _ratio(num, den)))
    return ratios, {}


def _zeta_field(grid: GridSpec) -> ScalarField:
    # fixed bounded multiplier with bounded derivatives of all orders;
    # wavenumbers on the box quantum so sampling sees no seam
    k = math.pi / grid.L
    coords = grid.coords()
    vals = 1.0 + 0.5 * np.sin(k * coords[0]) * np.cos(2.0 * k * coords[1])
    return ScalarField(grid, np.broadcast_to(vals, grid.shape).copy())


def _validate_multiplier(par, grid):
    _require(abs(par["s"]) < par["N"], "|s| < N",
             f"s={par['s']}, N={par['N']}")


def _run_multiplier(sess, corpus, par):
    spec = NormSpec(par["s"], par["delta"], par["p"])
    zeta = _zeta_field(sess.grid)
    ratios = []
    for cf in corpus:
        u = sess.sample(cf)
        den = sess.norm(cf.name, u, spec)
        zu = u.with_values(zeta.values * u.values)
        num = sess.norm(f"{cf.name}|zeta", zu, spec)
        ratios.append((cf.name, _ratio(num, den)))
    return ratios, {}


def _tail_mask(r_grid: np.ndarray, R: float) -> np.ndarray:
    # complement of a cutoff that is 1 inside radius R and 0 beyond 2R,
    # ramping over the full octave so coarse grids resolve it
    return _smoothstep(r_grid / R - 1.0)


def _validate_cutoff(par, grid):
    _require(par["delta_prime"] < par["delta"], "delta' < delta",
             f"delta'={par['delta_prime']}, delta={par['delta']}")
    radii = tuple(par["radii"])
    if len(radii) < 2 or any(r <= 0 for r in radii) or sorted(radii) != list(radii):
        raise DomainError("radii must be an increasing positive sequence")
    if 2.0 * radii[-1] > grid.L:
        raise DomainError(
            f"cutoff support 2*R={2.0 * radii[-1]:g} exceeds box half-width {grid.L:g}")


def _run_cutoff(sess, corpus, par):
    radii = tuple(par["radii"])
    rate = par["delta"] - par["delta_prime"]
    spec_lo = NormSpec(par["s"], par["delta_prime"], par["p"])
    spec_hi = NormSpec(par["s"], par["delta"], par["p"])
    r_grid = sess.grid.radius()
    ratios = []
    transfer_slopes: dict[str, float] = {}
    raw_slopes: dict[str, float] = {}
    for cf in corpus:
        u = sess.sample(cf)
        den = sess.norm(cf.name, u, spec_hi)
        best = 0.0
        lo_vals = []
        hi_vals = []
        for R in radii:
            tail = u.with_values(_tail_mask(r_grid, R) * u.values)
            lo, hi = sess.norms(f"{cf.name}|cut{R:g}", tail, (spec_lo, spec_hi))
            best = max(best, _ratio(lo * R**rate, den))
            lo_vals.append(lo)
            hi_vals.append(hi)
        ratios.append((cf.name, best))
        lo_arr = np.asarray(lo_vals)
        hi_arr = np.asarray(hi_vals)
        # slope fits need a resolvable tail at every radius
        ok = (lo_arr > 1e-9 * max(den, 1e-300)) & (hi_arr > 0.0)
        if ok.sum() >= 3:
            x = np.log(np.asarray(radii)[ok])
            transfer_slopes[cf.name] = float(
                np.polyfit(x, np.log(lo_arr[ok] / hi_arr[ok]), 1)[0])
            raw_slopes[cf.name] = float(np.polyfit(x, np.log(lo_arr[ok]), 1)[0])
    fitted = float(np.median(list(transfer_slopes.values()))) if transfer_slopes else math.nan
    extras = {
        "fitted_exponent": fitted,
        "expected_exponent": -rate,
        "per_field_exponent": transfer_slopes,
        "raw_decay_exponent": raw_slopes,
        "radii": list(radii),
    }
    return ratios, extras


def _validate_embedding(par, grid):
    n_over_p = grid.n / par["p"]
    m = par["m"]
    if m != int(m) or m < 0:
        raise DomainError(f"m must be a nonnegative integer, got {m}")
    _require(par["s"] > n_over_p + m, "s > n/p + m",
             f"s={par['s']}, n/p + m={n_over_p + m}")
    _require(par["beta"] <= par["delta"] + n_over_p, "beta <= delta + n/p",
             f"beta={par['beta']}, delta + n/p={par['delta'] + n_over_p}")


def _alpha_derivative(u: ScalarField, alpha) -> ScalarField:
    out = u
    for axis, order in enumerate(alpha):
        for _ in range(order):
            out = spectral_derivative(out, axis)
    return out


def _run_embedding(sess, corpus, par):
    m = int(par["m"])
    beta = par["beta"]
    spec = NormSpec(par["s"], par["delta"], par["p"])
    grid = sess.grid
    alphas = [(0,) * grid.n]
    for order in range(1, m + 1):
        alphas.extend(_compositions(order, grid.n))
    one_plus_r = 1.0 + grid.radius()
    ratios = []
    for cf in corpus:
        u = sess.sample(cf)
        den = sess.norm(cf.name, u, spec)
        num = 0.0
        for alpha in alphas:
            vals = _alpha_derivative(u, alpha).values
            weight = one_plus_r ** (beta + sum(alpha))
            num += float(np.max(weight * np.abs(vals)))
        ratios.append((cf.name, _ratio(num, den)))
    return ratios, {}


def _product_hypotheses(s, s1, s2, p, n):
    _require(s <= min(s1, s2), "s <= min(s1, s2)",
             f"s={s}, s1={s1}, s2={s2}")
    _require(s1 + s2 > s + n / p, "s1 + s2 > s + n/p",
             f"s1 + s2={s1 + s2}, s + n/p={s + n / p}")
    floor = n * max(0.0, 2.0 / p - 1.0)
    _require(s1 + s2 >= floor, "s1 + s2 >= n*max(0, 2/p - 1)",
             f"s1 + s2={s1 + s2}, bound={floor}")


def _validate_product(par, grid):
    n = grid.n
    _product_hypotheses(par["s"], par["s1"], par["s2"], par["p"], n)
    bound = par["delta1"] + par["delta2"] + n / par["p"]
    _require(par["delta"] <= bound, "delta <= delta1 + delta2 + n/p",
             f"delta={par['delta']}, bound={bound}")


def _run_product(sess, corpus, par):
    spec_out = NormSpec(par["s"], par["delta"], par["p"])
    spec1 = NormSpec(par["s1"], par["delta1"], par["p"])
    spec2 = NormSpec(par["s2"], par["delta2"], par["p"])
    ratios = []
    for i, cf in enumerate(corpus):
        cg = corpus[(i + 1) % len(corpus)]
        u = sess.sample(cf)
        v = sess.sample(cg)
        uv = u.with_values(u.values * v.values)
        label = f"{cf.name}*{cg.name}"
        num = sess.norm(label, uv, spec_out)
        den = sess.norm(cf.name, u, spec1) * sess.norm(cg.name, v, spec2)
        ratios.append((label, _ratio(num, den)))
    return ratios, {}


def _validate_triple(par, grid):
    n = grid.n
    _product_hypotheses(par["s"], par["s1"], par["s2"], par["p"], n)
    bound = par["delta1"] + par["delta2"] + par["delta3"] + 2.0 * n / par["p"]
    _require(par["delta"] <= bound,
             "delta <= delta1 + delta2 + delta3 + 2n/p",
             f"delta={par['delta']}, bound={bound}")


def _run_triple(sess, corpus, par):
    spec_out = NormSpec(par["s"], par["delta"], par["p"])
    spec1 = NormSpec(par["s1"], par["delta1"], par["p"])
    spec2 = NormSpec(par["s2"], par["delta2"], par["p"])
    spec3 = NormSpec(par["s2"], par["delta3"], par["p"])
    ratios = []
    for i, cf in enumerate(corpus):
        cg = corpus[(i + 1) % len(corpus)]
        ch = corpus[(i + 2) % len(corpus)]
        u, v, w = sess.sample(cf), sess.sample(cg), sess.sample(ch)
        uvw = u.with_values(u.values * v.values * w.values)
        label = f"{cf.name}*{cg.name}*{ch.name}"
        num = sess.norm(label, uvw, spec_out)
        den = (sess.norm(cf.name, u, spec1) * sess.norm(cg.name, v, spec2)
               * sess.norm(ch.name, w, spec3))
        ratios.append((label, _ratio(num, den)))
    return ratios, {}


def _validate_fractional(par, grid):
    _require(par["beta"] >= 1.0, "beta >= 1", f"beta={par['beta']}")
    _require(0.0 < par["s"] < par["beta"] + 1.0 / par["p"],
             "0 < s < beta + 1/p",
             f"s={par['s']}, beta + 1/p={par['beta'] + 1.0 / par['p']}")


def _run_fractional(sess, corpus, par):
    beta = par["beta"]
    spec = NormSpec(par["s"], par["delta"], par["p"])
    ratios = []
    sups = []
    for cf in corpus:
        u = sess.sample(cf)
        den = sess.norm(cf.name, u, spec)
        power = u.with_values(np.abs(u.values) ** beta)
        num = sess.norm(f"{cf.name}|abs^{beta:g}", power, spec)
        ratios.append((cf.name, _ratio(num, den)))
        sups.append(float(np.max(np.abs(u.values))))
    return ratios, {"sup_norms": _quantiles(sups)}


_MOSER_MAPS = {
    "square": lambda t: t * t,
    "sin": np.sin,
    "expm1": np.expm1,
}


def _moser_map(par):
    F = par["F"]
    if callable(F):
        return F, getattr(F, "__name__", "callable")
    if F in _MOSER_MAPS:
        return _MOSER_MAPS[F], F
    raise ConfigurationError(
        f"unknown composition map {F!r}; built-ins: {sorted(_MOSER_MAPS)}")


def _validate_moser(par, grid):
    N = par["N"]
    if N != int(N) or N < 1:
        raise DomainError(f"N must be a positive integer, got {N}")
    _require(0.0 < par["s"] <= N, "0 < s <= N",
             f"s={par['s']}, N={N}")
    F, _ = _moser_map(par)
    f0 = float(np.asarray(F(np.zeros(1)))[0])
    _require(abs(f0) <= 1e-12, "F(0) = 0", f"F(0)={f0}")


def _run_moser(sess, corpus, par):
    F, fname = _moser_map(par)
    N = int(par["N"])
    spec = NormSpec(par["s"], par["delta"], par["p"])
    ratios = []
    for cf in corpus:
        u = sess.sample(cf)
        den = sess.norm(cf.name, u, spec) * (1.0 + float(np.max(np.abs(u.values))) ** N)
        fu = u.with_values(np.asarray(F(u.values), dtype=np.float64))
        num = sess.norm(f"{cf.name}|{fname}", fu, spec)
        ratios.append((cf.name, _ratio(num, den)))
    return ratios, {"map": fname}


def _validate_zero_order(par, grid):
    pass  # any p in (1, inf); the report direction depends on p


def _run_zero_order(sess, corpus, par):
    p = par["p"]
    spec = NormSpec(0.0, par["delta"], p)
    if p < 2.0:
        direction = "L_over_W"
    elif p > 2.0:
        direction = "W_over_L"
    else:
        direction = "both"
    w_over_l, l_over_w, ratios = [], [], []
    for cf in corpus:
        u = sess.sample(cf)
        w = sess.norm(cf.name, u, spec)
        lp = weighted_lp(u, p, par["delta"])
        r_wl = _ratio(w, lp)
        r_lw = _ratio(lp, w)
        w_over_l.append(r_wl)
        l_over_w.append(r_lw)
        if direction == "L_over_W":
            value = r_lw
        elif direction == "W_over_L":
            value = r_wl
        else:
            value = max(r_lw, r_wl)
        ratios.append((cf.name, value))
    extras = {
        "direction": direction,
        "ratio_W_over_L": _quantiles(w_over_l),
        "ratio_L_over_W": _quantiles(l_over_w),
    }
    if direction == "both":
        extras["note"] = "inclusion direction flips at p = 2; both ratios reported"
    return ratios, extras


# ---------------------------------------------------------------------------
# registry and driver


@dataclass(frozen=True)
class _Probe:
    defaults: dict
    validate: Callable
    run: Callable
    min_fields: int = 1


_PROBES = {
    "derivative": _Probe(
        {"s": 2.0, "delta": -1.0, "p": 2.0},
        _validate_derivative, _run_derivative),
    "smooth-multiplier": _Probe(
        {"s": 1.0, "delta": -1.0, "p": 2.0, "N": 3},
        _validate_multiplier, _run_multiplier),
    "cutoff-decay": _Probe(
        {"s": 1.0, "delta": 0.0, "delta_prime": -1.0, "p": 2.0,
         "radii": (2.0, 2.83, 4.0, 5.66, 8.0)},
        _validate_cutoff, _run_cutoff),
    "embedding": _Probe(
        {"s": 2.0, "delta": 0.0, "p": 2.0, "m": 0, "beta": 1.5},
        _validate_embedding, _run_embedding),
    "product": _Probe(
        {"s": 1.0, "s1": 2.0, "s2": 2.0, "delta": -1.0,
         "delta1": 0.0, "delta2": 0.0, "p": 2.0},
        _validate_product, _run_product, min_fields=2),
    "triple-product": _Probe(
        {"s": 1.0, "s1": 2.0, "s2": 2.0, "delta": -1.0,
         "delta1": 0.0, "delta2": 0.0, "delta3": 0.0, "p": 2.0},
        _validate_triple, _run_triple, min_fields=3),
    "fractional-power": _Probe(
        {"s": 1.0, "delta": -1.0, "p": 2.0, "beta": 1.5},
        _validate_fractional, _run_fractional),
    "moser": _Probe(
        {"s": 2.0, "delta": -1.0, "p": 2.0, "N": 2, "F": "square"},
        _validate_moser, _run_moser),
    "zero-order": _Probe(
        {"delta": -1.0, "p": 2.0},
        _validate_zero_order, _run_zero_order),
}


def _canonical(name: str) -> str:
    key = str(name).strip().lower()
    return _ALIASES.get(key, key)


def probe_inequality(name: str, corpus, specs: dict | None = None, *,
                     grid: GridSpec | None = None,
                     refine_grid: GridSpec | None = None,
                     stability_subset: int = 8,
                     session: ProbeSession | None = None,
                     refine_session: ProbeSession | None = None,
                     corpus_seed: int | None = None) -> ProbeReport:
    """Sweep one inequality probe over a corpus and report the ratios.

    The stability flag reruns the probe on the first ``stability_subset``
    corpus elements at refined resolution (double the working grid unless
    ``refine_grid`` is given) and compares per-field ratios; pass
    ``stability_subset=0`` to skip that and leave the flag None.  Passing
    shared sessions lets a battery of probes reuse cached norms.
    """
    key = _canonical(name)
    probe = _PROBES.get(key)
    if probe is None:
        raise ConfigurationError(
            f"unknown probe {name!r}; known probes: {', '.join(PROBE_NAMES)}")
    corpus = tuple(corpus)
    if len(corpus) < probe.min_fields:
        raise ConfigurationError(
            f"probe {key!r} needs at least {probe.min_fields} corpus fields")
    params = dict(probe.defaults)
    if specs:
        unknown = sorted(set(specs) - set(params))
        if unknown:
            raise ConfigurationError(
                f"unknown parameters for probe {key!r}: {unknown}")
        params.update(specs)

    base = session if session is not None else ProbeSession(grid or GridSpec())
    if grid is not None and base.grid != grid:
        raise ConfigurationError("session grid disagrees with the grid argument")
    probe.validate(params, base.grid)

    ratios, extras = probe.run(base, corpus, params)
    values = [v for _, v in ratios]
    max_ratio = max(values) if values else 0.0

    stability_flag = None
    max_drift = None
    if stability_subset and len(corpus) > 0:
        sub = corpus[:min(stability_subset, len(corpus))]
        if refine_session is not None:
            fine = refine_session
        else:
            fine_grid = refine_grid or GridSpec(base.grid.n, base.grid.L,
                                                2 * base.grid.N)
            fine = ProbeSession(fine_grid)
        if fine.grid.N <= base.grid.N:
            raise ConfigurationError("refinement grid must be finer than the base grid")
        coarse_sub, _ = probe.run(base, sub, params)
        fine_sub, _ = probe.run(fine, sub, params)
        drifts = [abs(fv - cv) / cv
                  for (_, cv), (_, fv) in zip(coarse_sub, fine_sub) if cv > 0.0]
        max_drift = max(drifts) if drifts else 0.0
        stability_flag = bool(max_drift <= 0.15)

    seeds = {} if corpus_seed is None else {"corpus_seed": int(corpus_seed)}
    report_params = dict(params)
    if key == "moser":
        report_params["F"] = _moser_map(params)[1]
    return ProbeReport(name=key, params=report_params, max_ratio=float(max_ratio),
                       quantiles=_quantiles(values), stability_flag=stability_flag,
                       max_drift=max_drift, seeds=seeds, ratios=tuple(ratios),
                       extras=extras)

"""Metric model: curvature oracles, manifold norms, conformal rescaling."""

import numpy as np
import pytest

from afpde import (
    ConfigurationError,
    DegenerateMetricError,
    DomainError,
    GridSpec,
    NormSpec,
    PositivityLossError,
    ScalarField,
    SymTensorField,
    VectorField,
)
from afpde.fields import gradient, rfftn
from afpde.geometry import (
    MetricData,
    RegionSplit,
    _laplace_divergence_form,
    build_cache,
    conformal_transform,
    covariant_divergence,
    flat_metric,
    laplace_beltrami,
    manifold_norm,
    pairing_Mg,
)
from afpde.norms import _derivative_field, pairing_W, weighted_norm_dyadic

GRID = GridSpec(n=3, L=16.0, N=64)
SPEC = NormSpec(2.0, -1.0, 2.0)


def full(grid, vals):
    return np.ascontiguousarray(np.broadcast_to(vals, grid.shape))


def radial(grid):
    return sum(x * x for x in grid.coords())


def conformal_metric(grid, amp, width):
    psi = full(grid, 1.0 + amp * np.exp(-radial(grid) / width**2))
    md = conformal_transform(flat_metric(grid), ScalarField(grid, psi), "metric")
    return psi, md


@pytest.fixture(scope="module")
def flat_cache():
    return build_cache(flat_metric(GRID))


@pytest.fixture(scope="module")
def curved():
    # width 2 keeps psi^4 resolved at N = 64
    psi, md = conformal_metric(GRID, 0.5, 2.0)
    return psi, build_cache(md)


# ---------------------------------------------------------------------------
# cache invariants


def test_flat_cache_everything_vanishes(flat_cache):
    c = flat_cache
    assert np.abs(c.christoffel).max() == 0.0
    assert np.abs(c.ricci).max() == 0.0
    assert np.abs(c.scalar.values).max() == 0.0
    assert np.abs(c.sqrt_det.values - 1.0).max() == 0.0
    assert c.identity_defect <= 1e-12


def test_inverse_identity_and_contraction(curved):
    _, c = curved
    assert c.identity_defect <= 1e-10
    recontracted = np.einsum("...ab,...ab->...", c.inverse, c.ricci)
    assert np.abs(recontracted - c.scalar.values).max() <= 1e-10


def test_christoffel_lower_symmetry(curved):
    _, c = curved
    assert np.array_equal(c.christoffel, c.christoffel.swapaxes(-1, -2))


def test_christoffel_conformal_closed_form(curved):
    # Gamma^c_ab = 2 psi^-1 (d_a psi delta_cb + d_b psi delta_ca
    #                        - d_c psi delta_ab) for g = psi^4 delta
    psi, c = curved
    dpsi = gradient(psi, GRID)
    for cc in range(3):
        for a in range(3):
            for b in range(3):
                exact = 2.0 / psi * ((cc == b) * dpsi[a] + (cc == a) * dpsi[b]
                                     - (a == b) * dpsi[cc])
                err = np.abs(c.christoffel[..., cc, a, b] - exact).max()
                assert err <= 1e-5


def test_contracted_symbol_is_log_volume_gradient(curved):
    _, c = curved
    dlog = gradient(np.log(c.sqrt_det.values), GRID)
    for b in range(3):
        assert np.abs(c.contracted[..., b] - dlog[b]).max() <= 1e-5


def test_sqrt_det_conformal(curved):
    psi, c = curved
    assert np.abs(c.sqrt_det.values - psi**6).max() <= 1e-12


# ---------------------------------------------------------------------------
# curvature oracles


def test_scalar_curvature_conformal_oracle(curved):
    # R(psi^4 delta) = -8 psi^-5 Lap psi, Lap psi analytic
    psi, c = curved
    r2 = radial(GRID)
    lap_psi = 0.5 * (4.0 * r2 / 16.0 - 6.0 / 4.0) * np.exp(-r2 / 4.0)
    oracle = -8.0 * psi**-5 * full(GRID, lap_psi)
    rel = np.linalg.norm(c.scalar.values - oracle) / np.linalg.norm(oracle)
    assert rel <= 2e-4


def test_scalar_curvature_oracle_fine_grid():
    # the width-1 factor needs the fine grid: psi^4 carries exp(-4 r^2)
    grid = GridSpec(n=3, L=16.0, N=128)
    psi, md = conformal_metric(grid, 0.5, 1.0)
    c = build_cache(md)
    r2 = radial(grid)
    lap_psi = 0.5 * (4.0 * r2 - 6.0) * np.exp(-r2)
    oracle = -8.0 * psi**-5 * full(grid, lap_psi)
    rel = np.linalg.norm(c.scalar.values - oracle) / np.linalg.norm(oracle)
    assert rel <= 1e-4


def smooth_deviation(grid, eps, seed=11):
    rng = np.random.default_rng(seed)
    X = grid.coords()
    comps = []
    for _ in range(6):
        vals = np.zeros(grid.shape)
        for _ in range(3):
            ce = rng.uniform(-3, 3, 3)
            w = rng.uniform(1.5, 3.0)
            vals += rng.uniform(-1, 1) * np.exp(
                -sum((x - ci) ** 2 for x, ci in zip(X, ce)) / w**2)
        comps.append(vals)
    peak = max(np.abs(c).max() for c in comps)
    return SymTensorField(grid, tuple(eps / peak * c for c in comps))


def linearized_scalar(h, grid):
    lin = np.zeros(grid.shape)
    tr = sum(h.comp(a, a) for a in range(3))
    spec_tr = rfftn(tr)
    for a in range(3):
        for b in range(3):
            alpha = [0, 0, 0]
            alpha[a] += 1
            alpha[b] += 1
            lin += _derivative_field(rfftn(h.comp(a, b)), grid, tuple(alpha))
        alpha = [0, 0, 0]
        alpha[a] = 2
        lin -= _derivative_field(spec_tr, grid, tuple(alpha))
    return lin


def test_scalar_curvature_linearization():
    # error against d_a d_b h_ab - Lap(tr h) is quadratic in the deviation
    errs = {}
    for eps in (1e-2, 1e-3):
        h = smooth_deviation(GRID, eps)
        cache = build_cache(MetricData(h, SPEC))
        errs[eps] = np.abs(cache.scalar.values - linearized_scalar(h, GRID)).max()
    assert errs[1e-3] <= 5e-6
    assert 50.0 < errs[1e-2] / errs[1e-3] < 200.0


def test_contracted_bianchi_under_refinement():
    errs = {}
    for N in (32, 64):
        grid = GridSpec(n=3, L=16.0, N=N)
        _, md = conformal_metric(grid, 0.4, 2.0)
        c = build_cache(md)
        Rup = np.einsum("...ac,...cd,...bd->...ab", c.inverse, c.ricci, c.inverse)
        G = Rup - 0.5 * c.inverse * c.scalar.values[..., None, None]
        comps = tuple(G[..., a, b] for a in range(3) for b in range(a, 3))
        div = covariant_divergence(c, SymTensorField(grid, comps))
        errs[N] = max(np.abs(cc).max() for cc in div.components)
    assert errs[32] < 0.1
    assert errs[64] < 0.01 * errs[32]


# ---------------------------------------------------------------------------
# metric validation


def test_degenerate_metric_reports_worst_node():
    c = -1.0 + 1e-4
    comps = [np.full(GRID.shape, c), np.zeros(GRID.shape), np.zeros(GRID.shape),
             np.full(GRID.shape, c), np.zeros(GRID.shape), np.full(GRID.shape, c)]
    with pytest.raises(DegenerateMetricError) as err:
        MetricData(SymTensorField(GRID, tuple(comps)), SPEC)
    assert "worst node" in str(err.value)


def test_eigen_window_must_contain_one():
    with pytest.raises(ConfigurationError):
        MetricData(SymTensorField.zeros(GRID), SPEC, lam_min=1.5)


def test_class_diagnostic_records_truncation():
    h = smooth_deviation(GRID, 1e-2)
    diag = MetricData(h, SPEC).class_diagnostic()
    assert diag["finite"]
    assert isinstance(diag["truncated"], bool)
    assert len(diag["component_norms"]) == 6


def test_eigen_range_exposed(curved):
    psi, _ = curved
    md = conformal_metric(GRID, 0.5, 2.0)[1]
    lo, hi = md.eigen_range
    assert lo == pytest.approx(1.0, abs=1e-9)
    assert hi == pytest.approx(float((psi**4).max()), rel=1e-9)


# ---------------------------------------------------------------------------
# Laplace-Beltrami


def test_laplace_flat_is_component_sum(flat_cache):
    r2 = radial(GRID)
    u = ScalarField(GRID, full(GRID, np.exp(-r2 / 4.0)))
    lb = laplace_beltrami(flat_cache, u)
    exact = (r2 / 4.0 - 1.5) * np.exp(-r2 / 4.0)
    assert np.abs(lb.values - exact).max() <= 1e-10


def test_laplace_constant_vanishes(flat_cache):
    u = ScalarField(GRID, np.full(GRID.shape, 3.7))
    assert np.abs(laplace_beltrami(flat_cache, u).values).max() <= 1e-12


def test_laplace_conformal_identity(curved):
    # Lap_g u = psi^-4 (Lap u + 2 psi^-1 grad psi . grad u)
    psi, c = curved
    r2 = radial(GRID)
    u = ScalarField(GRID, full(GRID, np.exp(-r2 / 4.0)))
    lb = laplace_beltrami(c, u)
    du = gradient(u.values, GRID)
    dpsi = gradient(psi, GRID)
    lap_u = (r2 / 4.0 - 1.5) * np.exp(-r2 / 4.0)
    ident = psi**-4 * (lap_u + 2.0 / psi * sum(p * q for p, q in zip(dpsi, du)))
    rel = np.linalg.norm(lb.values - ident) / np.linalg.norm(ident)
    assert rel <= 1e-5


def test_laplace_routes_agree(curved):
    _, c = curved
    u = ScalarField(GRID, full(GRID, np.exp(-radial(GRID) / 4.0)))
    a = laplace_beltrami(c, u).values
    b = _laplace_divergence_form(c, u).values
    assert np.abs(a - b).max() / np.abs(a).max() <= 1e-5


def test_laplace_grid_mismatch(flat_cache):
    other = GridSpec(n=3, L=16.0, N=32)
    with pytest.raises(DomainError):
        laplace_beltrami(flat_cache, ScalarField(other, np.zeros(other.shape)))


def test_covariant_divergence_flat_is_plain_divergence(flat_cache):
    h = smooth_deviation(GRID, 1.0, seed=3)
    div = covariant_divergence(flat_cache, h)
    for b in range(3):
        plain = np.zeros(GRID.shape)
        for a in range(3):
            plain += gradient(h.comp(a, b), GRID)[a]
        assert np.abs(div.components[b] - plain).max() <= 1e-12


# ---------------------------------------------------------------------------
# region split and manifold norm


def test_region_split_partition():
    split = RegionSplit(GRID)
    assert split.r0 == pytest.approx(GRID.L / 4.0)
    assert np.abs(split.chi_core + split.chi_ext - 1.0).max() <= 1e-12
    r = GRID.radius()
    assert np.all(split.chi_core[r <= split.r0] == 1.0)
    assert np.all(split.chi_core[r >= 2.0 * split.r0] == 0.0)
    w_core, w_ext = split.quadrature_weights()
    assert np.abs(w_core**2 + w_ext**2 - 1.0).max() <= 1e-12


def test_region_split_must_fit():
    with pytest.raises(DomainError):
        RegionSplit(GRID, r0=10.0)


def test_manifold_norm_zero_and_sign():
    assert manifold_norm(ScalarField(GRID, np.zeros(GRID.shape)), SPEC) == 0.0
    with pytest.raises(DomainError):
        manifold_norm(ScalarField(GRID, np.zeros(GRID.shape)),
                      NormSpec(-1.0, 0.0, 2.0))


def test_manifold_norm_far_support_reduces_to_weighted():
    X = GRID.coords()
    vals = np.exp(-((X[0] - 11.0) ** 2 + X[1] ** 2 + X[2] ** 2) / 0.7**2)
    u = ScalarField(GRID, full(GRID, vals))
    spec = NormSpec(1.0, -1.0, 2.0)
    mn = manifold_norm(u, spec)
    wn = weighted_norm_dyadic(u, spec).value
    assert abs(mn - wn) / wn <= 1e-8


def test_manifold_norm_partition_equivalence():
    # different splits give equivalent norms; spot the ratio band
    rng = np.random.default_rng(7)
    X = GRID.coords()
    spec = NormSpec(1.0, -1.0, 2.0)
    s4, s6 = RegionSplit(GRID, 4.0), RegionSplit(GRID, 6.0)
    for _ in range(6):
        ce = rng.uniform(-2, 2, 3)
        w = rng.uniform(1.0, 3.0)
        vals = np.exp(-sum((x - c) ** 2 for x, c in zip(X, ce)) / w**2)
        f = ScalarField(GRID, full(GRID, vals))
        ratio = manifold_norm(f, spec, s4) / manifold_norm(f, spec, s6)
        assert 0.1 < ratio < 10.0


# ---------------------------------------------------------------------------
# metric pairing


def test_pairing_flat_reduces_to_plain(flat_cache):
    r2 = radial(GRID)
    u = ScalarField(GRID, full(GRID, np.exp(-r2 / 3.0)))
    v = ScalarField(GRID, full(GRID, np.exp(-r2 / 2.0)))
    a = pairing_Mg(u, v, flat_cache)
    b = pairing_W(u, v)
    assert abs(a - b) <= 1e-10 * abs(b)


def test_pairing_conformal_volume(curved):
    psi, c = curved
    r2 = radial(GRID)
    u = ScalarField(GRID, full(GRID, np.exp(-r2 / 3.0)))
    v = ScalarField(GRID, full(GRID, np.exp(-r2 / 2.0)))
    got = pairing_Mg(u, v, c)
    direct = float(np.sum(u.values * v.values * psi**6)) * GRID.cell_volume
    assert abs(got - direct) / abs(direct) <= 1e-6
    lit = pairing_Mg(u, v, c, literal=True)
    assert abs(lit - got) / abs(got) <= 1e-10


def test_pairing_symmetry(curved):
    _, c = curved
    r2 = radial(GRID)
    u = ScalarField(GRID, full(GRID, np.exp(-r2 / 3.0) - 0.3 * np.exp(-r2)))
    v = ScalarField(GRID, full(GRID, np.exp(-r2 / 2.0)))
    assert pairing_Mg(u, v, c, literal=True) == pytest.approx(
        pairing_Mg(v, u, c, literal=True), rel=1e-12)


def test_pairing_vector_inputs(curved):
    psi, c = curved
    r2 = radial(GRID)
    base = full(GRID, np.exp(-r2 / 3.0))
    X = VectorField(GRID, (base, 0.5 * base, np.zeros(GRID.shape)))
    got = pairing_Mg(X, X, c)
    # g_ab = psi^4 delta_ab, so the integrand is psi^10 |X|^2
    direct = float(np.sum((1.0 + 0.25) * base**2 * psi**10)) * GRID.cell_volume
    assert abs(got - direct) / abs(direct) <= 1e-6


def test_pairing_type_mismatch(flat_cache):
    u = ScalarField(GRID, np.zeros(GRID.shape))
    with pytest.raises(DomainError):
        pairing_Mg(u, VectorField.zeros(GRID), flat_cache)


# ---------------------------------------------------------------------------
# conformal rescalings


def test_conformal_identity_factor(curved):
    one = ScalarField(GRID, np.ones(GRID.shape))
    md = conformal_metric(GRID, 0.3, 2.0)[1]
    out = conformal_transform(md, one, "metric")
    for i in range(6):
        assert np.array_equal(out.h.components[i], md.h.components[i])
    z = ScalarField(GRID, full(GRID, np.exp(-radial(GRID))))
    assert np.array_equal(conformal_transform(z, one, "energy").values, z.values)


def test_conformal_role_exponents():
    r2 = radial(GRID)
    phi = ScalarField(GRID, full(GRID, 1.0 + 0.5 * np.exp(-r2 / 4.0)))
    z = ScalarField(GRID, full(GRID, np.exp(-r2)))
    out = conformal_transform(z, phi, "energy")
    assert np.allclose(out.values, phi.values**-8 * z.values, rtol=1e-13)
    j = VectorField(GRID, (z.values, np.zeros(GRID.shape), np.zeros(GRID.shape)))
    outj = conformal_transform(j, phi, "momentum")
    assert np.allclose(outj.components[0], phi.values**-10 * z.values, rtol=1e-13)
    K = SymTensorField(GRID, tuple(np.full(GRID.shape, float(i)) for i in range(6)))
    outK = conformal_transform(K, phi, "extrinsic")
    assert np.allclose(outK.components[3], phi.values**-10 * 3.0, rtol=1e-13)


def test_conformal_errors():
    r2 = radial(GRID)
    phi = ScalarField(GRID, full(GRID, 1.0 + 0.5 * np.exp(-r2 / 4.0)))
    z = ScalarField(GRID, full(GRID, np.exp(-r2)))
    with pytest.raises(ConfigurationError):
        conformal_transform(z, phi, "volume")
    with pytest.raises(DomainError):
        conformal_transform(z, phi, "momentum")
    bad = ScalarField(GRID, full(GRID, np.exp(-r2) - 0.5))
    with pytest.raises(PositivityLossError) as err:
        conformal_transform(z, bad, "energy")
    assert "node" in str(err.value)


def test_conformal_metric_revalidated():
    md = MetricData(SymTensorField.zeros(GRID), SPEC, lam_min=0.5, lam_max=2.0)
    phi = ScalarField(GRID, full(GRID, 1.0 + np.exp(-radial(GRID) / 4.0)))
    with pytest.raises(DegenerateMetricError):
        conformal_transform(md, phi, "metric")


def test_conformal_curvature_law_flat_base(flat_cache):
    # on a scalar-flat base: phi^5 R(g) = -8 Lap phi
    phi = ScalarField(GRID, full(GRID, 1.0 + 0.2 * np.exp(-radial(GRID) / 8.0)))
    g = conformal_transform(flat_metric(GRID), phi, "metric")
    c = build_cache(g)
    lhs = phi.values**5 * c.scalar.values
    rhs = -8.0 * laplace_beltrami(flat_cache, phi).values
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) <= 1e-8


def test_conformal_curvature_law_curved_base():
    # general form carries the factor on the base curvature:
    # phi^5 R(g) = phi R(ghat) - 8 Lap_ghat phi
    base = conformal_metric(GRID, 0.3, 2.0)[1]
    chat = build_cache(base)
    phi = ScalarField(GRID, full(GRID, 1.0 + 0.2 * np.exp(-radial(GRID) / 8.0)))
    g = conformal_transform(base, phi, "metric")
    c = build_cache(g)
    lhs = phi.values**5 * c.scalar.values
    rhs = (phi.values * chat.scalar.values
           - 8.0 * laplace_beltrami(chat, phi).values)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) <= 1e-4


def test_cache_field_accessors(curved):
    _, c = curved
    inv = c.inverse_field()
    assert np.array_equal(inv.comp(0, 1), c.inverse[..., 0, 1])
    ric = c.ricci_field()
    assert np.array_equal(ric.comp(2, 2), c.ricci[..., 2, 2])

"""Operator-level tests: curvature formulas, stencils, quadrature, and the
discrete exactness properties the functional identities rely on."""

import math

import numpy as np
import pytest

import riccilab as rl

TWO_PI = 2.0 * math.pi


def sphere(c=1.0, n=2, t=0.0):
    return rl.MetricState(rl.RoundSphere(n), t, np.array([c]))


def berger(A, B, C, t=0.0):
    return rl.MetricState(rl.BergerSphere(), t, np.array([A, B, C]))


def torus(phi, N=64, L=TWO_PI, t=0.0):
    backend = rl.ConformalTorus2D(N, L)
    x, y = rl.grid_coords(backend)
    return rl.MetricState(backend, t, phi(x, y) if callable(phi) else phi + 0.0 * x * y)


def flat(N=64, L=TWO_PI):
    return torus(lambda x, y: 0.0 * x + 0.0 * y, N=N, L=L)


def smooth_random_field(backend, seed, amplitude=1.0, cutoff=3):
    rng = np.random.default_rng(seed)
    x, y = rl.grid_coords(backend)
    w = np.zeros((backend.N, backend.N))
    for kx in range(cutoff + 1):
        for ky in range(-cutoff, cutoff + 1):
            if kx == 0 and ky <= 0:
                continue
            a, b = rng.standard_normal(2)
            phase = TWO_PI / backend.L * (kx * x + ky * y)
            w += (a * np.cos(phase) + b * np.sin(phase)) / (1 + kx * kx + ky * ky)
    return amplitude * w


# -------------------------------------------------------------------------
# Scalar curvature
# -------------------------------------------------------------------------

def test_scalar_curvature_round_sphere():
    assert rl.scalar_curvature(sphere(1.0, 2)).values == pytest.approx(2.0, abs=0)
    assert rl.scalar_curvature(sphere(2.0, 3)).values == pytest.approx(3.0, rel=1e-15)


def test_scalar_curvature_flat_torus_zero():
    assert np.all(rl.scalar_curvature(flat()).values == 0.0)


@pytest.mark.parametrize("N", [64, 128])
def test_scalar_curvature_conformal_sine(N):
    # R = -2 e^{-2 phi} Lap0 phi with phi = 0.1 sin x gives
    # R = 0.2 sin(x) e^{-0.2 sin x}; the stencil error is O(h^2).
    m = torus(lambda x, y: 0.1 * np.sin(x) + 0.0 * y, N=N)
    x, _ = rl.grid_coords(m.backend)
    exact = 0.2 * np.sin(x) * np.exp(-0.2 * np.sin(x)) + 0.0 * x.T
    err = np.max(np.abs(rl.scalar_curvature(m).values - exact))
    assert err < 0.03 * (TWO_PI / N) ** 2


def test_scalar_curvature_convergence_order():
    errs = []
    for N in (32, 64, 128):
        m = torus(lambda x, y: 0.1 * np.sin(x) + 0.0 * y, N=N)
        x, _ = rl.grid_coords(m.backend)
        exact = 0.2 * np.sin(x) * np.exp(-0.2 * np.sin(x)) + 0.0 * x.T
        errs.append(np.max(np.abs(rl.scalar_curvature(m).values - exact)))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.9)


# -------------------------------------------------------------------------
# Ricci tensor
# -------------------------------------------------------------------------

def test_ricci_flat_zero():
    assert np.all(rl.ricci(flat()).comps == 0.0)


def test_ricci_round_sphere_principal_values():
    # Ric = (n-1)/c in the orthonormal frame; for n=2, c=1 this is Ric = g.
    np.testing.assert_allclose(rl.ricci(sphere(1.0, 2)).comps, [1.0, 1.0], rtol=0)
    np.testing.assert_allclose(rl.ricci(sphere(0.5, 3)).comps, [4.0, 4.0, 4.0],
                               rtol=1e-15)


def test_ricci_torus_is_half_R_g():
    m = torus(lambda x, y: 0.05 * np.sin(x) + 0.03 * np.cos(y))
    R = rl.scalar_curvature(m).values
    g = rl.metric_tensor(m).comps
    ric = rl.ricci(m).comps
    np.testing.assert_allclose(ric, 0.5 * R * g, rtol=0, atol=1e-15)


@pytest.mark.parametrize("c", [1.0, 0.37, 2.5])
def test_berger_round_limit_matches_round_sphere(c):
    mb, ms = berger(c, c, c), sphere(c, 3)
    assert rl.scalar_curvature(mb).values == pytest.approx(
        float(rl.scalar_curvature(ms).values), rel=1e-12)
    np.testing.assert_allclose(rl.ricci(mb).comps, rl.ricci(ms).comps, rtol=1e-12)
    np.testing.assert_allclose(rl.ricci_flow_rhs(mb), np.full(3, -4.0), rtol=1e-12)
    assert rl.volume(mb) == pytest.approx(rl.volume(ms), rel=1e-12)


def test_berger_anisotropic_scalar_curvature_value():
    # R = (2/ABC) (2(AB+BC+CA) - (A^2+B^2+C^2)); at (1.2, 1, 1) this is 5.6.
    assert rl.scalar_curvature(berger(1.2, 1.0, 1.0)).values == pytest.approx(
        5.6, rel=1e-14)


def test_berger_volume_identity_against_flow():
    # d/dt ln Vol = -R must hold along the flow (finite-difference oracle).
    m0 = berger(1.2, 1.0, 1.0)
    dt = 1e-3
    traj = rl.integrate_forward(m0, 0.1, dt)
    vols = np.array([rl.volume(traj.state(k)) for k in range(traj.num_steps + 1)])
    Rs = np.array([float(rl.scalar_curvature(traj.state(k)).values)
                   for k in range(traj.num_steps + 1)])
    d = rl.fd_time_derivative(np.log(vols), dt)
    assert np.max(np.abs(d + Rs)[1:-1]) < 1e-6


# -------------------------------------------------------------------------
# Laplacian, gradient, Hessian
# -------------------------------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda: sphere(0.8, 2),
    lambda: berger(1.2, 1.0, 0.9),
    lambda: flat(),
])
def test_derivatives_of_constants_vanish(make):
    m = make()
    w = rl.const_field(m, 3.7)
    assert np.all(rl.laplace_beltrami(m, w).values == 0.0)
    assert np.all(rl.gradient_sq(m, w).values == 0.0)
    assert np.all(rl.hessian(m, w).comps == 0.0)


def test_laplacian_flat_eigenfunction():
    m = flat()
    x, y = rl.grid_coords(m.backend)
    w = rl.scalar_field(m, np.cos(x) + 0.0 * y)
    err = np.max(np.abs(rl.laplace_beltrami(m, w).values + np.cos(x) + 0.0 * y))
    assert err < (TWO_PI / 64) ** 2 / 10


def test_laplacian_constant_conformal_rescaling():
    m = torus(lambda x, y: 0.5 + 0.0 * x + 0.0 * y)
    x, y = rl.grid_coords(m.backend)
    w = rl.scalar_field(m, np.cos(x) + 0.0 * y)
    expected = -math.exp(-1.0) * (np.cos(x) + 0.0 * y)
    assert np.max(np.abs(rl.laplace_beltrami(m, w).values - expected)) < 1e-3


def test_gradient_sq_flat_and_rescaled():
    m = flat()
    x, y = rl.grid_coords(m.backend)
    w = rl.scalar_field(m, np.cos(x) + 0.0 * y)
    err = np.max(np.abs(rl.gradient_sq(m, w).values - np.sin(x) ** 2 + 0.0 * y))
    assert err < 2 * (TWO_PI / 64) ** 2
    m2 = torus(lambda x, y: 0.5 + 0.0 * x + 0.0 * y)
    w2 = rl.scalar_field(m2, np.cos(x) + 0.0 * y)
    err2 = np.max(np.abs(rl.gradient_sq(m2, w2).values
                         - math.exp(-1.0) * np.sin(x) ** 2 + 0.0 * y))
    assert err2 < 2 * (TWO_PI / 64) ** 2


def test_hessian_flat_cosine():
    m = flat()
    x, y = rl.grid_coords(m.backend)
    w = rl.scalar_field(m, np.cos(x) + 0.0 * y)
    H = rl.hessian(m, w)
    h2 = (TWO_PI / 64) ** 2
    assert np.max(np.abs(H.comps[0] + np.cos(x) + 0.0 * y)) < h2 / 10
    assert np.max(np.abs(H.comps[1])) < 1e-14
    assert np.max(np.abs(H.comps[2])) < 1e-14


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hessian_trace_equals_laplacian(seed):
    # The Christoffel contributions cancel identically in the trace, so
    # this holds for arbitrary grid fields, not just smooth ones.
    backend = rl.ConformalTorus2D(32, TWO_PI)
    rng = np.random.default_rng(seed)
    m = rl.MetricState(backend, 0.0, 0.4 * rng.standard_normal((32, 32)))
    w = rl.scalar_field(m, rng.standard_normal((32, 32)))
    tr = rl.tensor_trace(m, rl.hessian(m, w))
    lap = rl.laplace_beltrami(m, w)
    scale = np.max(np.abs(lap.values)) + 1.0
    assert np.max(np.abs(tr.values - lap.values)) < 1e-12 * scale


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_grad_outer_trace_equals_gradient_sq(seed):
    backend = rl.ConformalTorus2D(32, TWO_PI)
    rng = np.random.default_rng(seed)
    m = rl.MetricState(backend, 0.0, 0.4 * rng.standard_normal((32, 32)))
    w = rl.scalar_field(m, rng.standard_normal((32, 32)))
    tr = rl.tensor_trace(m, rl.grad_outer(m, w))
    gs = rl.gradient_sq(m, w)
    scale = np.max(np.abs(gs.values)) + 1.0
    assert np.max(np.abs(tr.values - gs.values)) < 1e-12 * scale


@pytest.mark.parametrize("seed", [0, 7, 11])
def test_discrete_integration_by_parts_exact(seed):
    # integral(Lap_g w * z) = -integral(<grad w, grad z>) to round-off for
    # all grid fields: the volume factors cancel and the quadratic form is
    # built for exact summation by parts.
    backend = rl.ConformalTorus2D(32, TWO_PI)
    rng = np.random.default_rng(seed)
    m = rl.MetricState(backend, 0.0, 0.4 * rng.standard_normal((32, 32)))
    w = rl.scalar_field(m, rng.standard_normal((32, 32)))
    z = rl.scalar_field(m, rng.standard_normal((32, 32)))
    lhs = rl.integrate(m, rl.scalar_field(m, rl.laplace_beltrami(m, w).values * z.values))
    rhs = -rl.integrate(m, rl.gradient_inner(m, w, z))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# -------------------------------------------------------------------------
# Integration, norms, total curvature
# -------------------------------------------------------------------------

def test_integrate_constants():
    m = flat()
    assert rl.integrate(m, rl.const_field(m, 1.0)) == pytest.approx(4 * math.pi**2,
                                                                    rel=1e-14)
    ms = sphere(1.0, 2)
    assert rl.integrate(ms, rl.const_field(ms, 1.0)) == pytest.approx(4 * math.pi,
                                                                      rel=1e-14)
    mc = torus(lambda x, y: 0.5 + 0.0 * x + 0.0 * y)
    assert rl.integrate(mc, rl.const_field(mc, 1.0)) == pytest.approx(
        4 * math.pi**2 * math.e, rel=1e-12)


def test_sphere_volume_scaling():
    assert rl.volume(sphere(2.0, 2)) == pytest.approx(8 * math.pi, rel=1e-14)
    assert rl.volume(sphere(1.0, 3)) == pytest.approx(2 * math.pi**2, rel=1e-14)


def test_tensor_norm_sq():
    m = flat()
    zero = rl.SymTensorField(m.backend, np.zeros((3, 64, 64)))
    assert np.all(rl.tensor_norm_sq(m, zero).values == 0.0)
    for mk in (flat(), sphere(0.7, 2), sphere(1.3, 4), berger(1.2, 1.0, 0.8)):
        g = rl.metric_tensor(mk)
        n = rl.dim(mk.backend)
        np.testing.assert_allclose(rl.tensor_norm_sq(mk, g).values, n, rtol=1e-12)
        np.testing.assert_allclose(rl.tensor_trace(mk, g).values, n, rtol=1e-12)


def test_tensor_norm_sq_componentwise():
    # |T|^2 = T11^2 + 2 T12^2 + T22^2 on the flat torus: 1 + 8 + 9 = 18.
    m = flat(N=8)
    comps = np.zeros((3, 8, 8))
    comps[0, 2, 3], comps[1, 2, 3], comps[2, 2, 3] = 1.0, 2.0, 3.0
    assert rl.tensor_norm_sq(m, rl.SymTensorField(m.backend, comps)).values[2, 3] \
        == pytest.approx(18.0, abs=0)


def test_total_curvature():
    # Round 2-sphere: integral(R) = 8 pi exactly; torus: 0 for any phi.
    ms = sphere(2.73, 2)
    assert rl.integrate(ms, rl.scalar_curvature(ms)) == pytest.approx(
        8 * math.pi, rel=1e-13)
    backend = rl.ConformalTorus2D(48, TWO_PI)
    m = rl.MetricState(backend, 0.0, smooth_random_field(backend, 13, 0.3))
    total = rl.integrate(m, rl.scalar_curvature(m))
    assert abs(total) < 1e-10


# -------------------------------------------------------------------------
# Flow velocity
# -------------------------------------------------------------------------

def test_flow_rhs_values():
    np.testing.assert_allclose(rl.ricci_flow_rhs(sphere(1.0, 2)), [-2.0], rtol=0)
    np.testing.assert_allclose(rl.ricci_flow_rhs(sphere(5.0, 3)), [-4.0], rtol=0)
    assert np.all(rl.ricci_flow_rhs(flat()) == 0.0)


# -------------------------------------------------------------------------
# Validation
# -------------------------------------------------------------------------

def test_backend_validation():
    with pytest.raises(ValueError):
        rl.RoundSphere(1)
    with pytest.raises(ValueError):
        rl.ConformalTorus2D(6, TWO_PI)
    with pytest.raises(ValueError):
        rl.ConformalTorus2D(33, TWO_PI)
    with pytest.raises(ValueError):
        rl.ConformalTorus2D(32, -1.0)


def test_state_validation():
    with pytest.raises(ValueError):
        rl.MetricState(rl.RoundSphere(2), 0.0, np.array([-1.0]))
    with pytest.raises(ValueError):
        rl.MetricState(rl.BergerSphere(), 0.0, np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        rl.MetricState(rl.ConformalTorus2D(8, 1.0), 0.0, np.full((8, 8), np.nan))
    with pytest.raises(ValueError):
        rl.MetricState(rl.ConformalTorus2D(8, 1.0), 0.0, np.zeros((4, 4)))


def test_cross_backend_field_rejected():
    m = flat()
    w = rl.const_field(sphere(), 1.0)
    with pytest.raises(rl.RicciLabError):
        rl.laplace_beltrami(m, w)

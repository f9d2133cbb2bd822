import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import erf

from burgerslab.kernel_lab import (
    ASYMPTOTIC_FACTOR,
    KernelBoundaryError,
    QuadConfig,
    QuadratureError,
    A1_limit,
    K0_value,
    assemble_K0,
    assemble_K_eps,
    erf_identity,
    estimate_wsio_kappa,
    extend_kernel,
    generator_A,
    ibp_transform_check,
    kernel_entries,
    kernel_from_csv,
    kernel_from_generator,
    kernel_from_matrix,
    kernel_to_csv,
    midpoint_nodes,
    mixed_derivative,
    residual_ratio,
)
from burgerslab.spectral_core import Control


# --- independent oracle for single kernel entries: plain series and nested adaptive quadrature


def G_series(eps, t, x):
    s, n = 0.0, 1
    while True:
        decay = math.exp(-eps * (n * math.pi) ** 2 * t)
        s += 4 / (n * math.pi) * decay * math.sin(n * math.pi * x)
        if decay < 1e-18:
            return s
        n += 2


def Phi_x_series(eps, theta, x):
    out = 0.0
    for n in range(2, 401, 2):
        rn = -24 * math.sqrt(2) / (n**5 * math.pi**5)
        out += rn * math.sqrt(2) * n * math.pi * math.exp(-eps * (n * math.pi) ** 2 * theta) * math.cos(n * math.pi * x)
    return out


def K_oracle(eps, s1, s2):
    def A(t):
        f = lambda x: Phi_x_series(eps, 1 - t, x) * G_series(eps, t - s1, x) * G_series(eps, t - s2, x)
        return quad(f, 0, 1, epsabs=1e-13, limit=200)[0] / 2

    return quad(A, max(s1, s2), 1, epsabs=1e-12, limit=100)[0]


@pytest.mark.parametrize("eps,s1,s2", [(0.1, 0.2, 0.6), (0.05, 0.1, 0.3)])
def test_kernel_entry_against_nested_quadrature(eps, s1, s2):
    want = K_oracle(eps, s1, s2)
    got = kernel_entries(eps, s1, s2)
    assert abs(got - want) < 1e-7 * abs(want)
    assert kernel_entries(eps, s2, s1) == got


def test_kernel_quadrature_converged():
    s1, s2 = np.array([0.05, 0.3, 0.7]), np.array([0.5, 0.3, 0.95])
    a = kernel_entries(0.01, s1, s2)
    b = kernel_entries(0.01, s1, s2, QuadConfig().refined())
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-6


def test_quad_config_rejects_low_resolution():
    with pytest.raises(QuadratureError):
        kernel_entries(0.01, 0.1, 0.2, QuadConfig(n_t=2))


# --- K^0


def test_K0_values():
    assert K0_value(1.0, 1.0) == 0
    assert np.isclose(K0_value(0.0, 0.0), 2**1.5)
    K = assemble_K0(8)
    assert np.allclose(K.values, K.values.T)
    assert np.allclose(K.nodes, midpoint_nodes(8))
    with pytest.raises(ValueError):
        assemble_K0()


# --- erf identity


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10))
def test_erf_identity_quadrature(a, b):
    want = quad(lambda x: 1 - erf(a * x) * erf(b * x), 0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    assert abs(erf_identity(a, b) - want) < 1e-9


def test_erf_identity_equal_rates():
    # int_0^inf 1 - erf(x)^2 = sqrt(2/pi)
    assert np.isclose(erf_identity(1.0, 1.0), math.sqrt(2 / math.pi), rtol=1e-14)
    with pytest.raises(ValueError):
        erf_identity(0.0, 1.0)


# --- generators


def _triples(rng, n):
    s = np.sort(rng.random((n, 2)) * 0.95, axis=1)
    s1, s2 = s[:, 1], s[:, 0]
    t = s1 + (1 - s1) * rng.uniform(0.02, 1.0, n)
    return t, s1, s2


@pytest.mark.parametrize("eps", [0.1, 0.01, 0.001])
def test_generator_decomposition(eps):
    t, s1, s2 = _triples(np.random.default_rng(7), 20)
    total = generator_A(eps, t, s1, s2)
    parts = sum(generator_A(eps, t, s1, s2, which=i) for i in range(1, 7))
    assert np.all(np.abs(total - parts) <= 1e-6 * np.maximum(1, np.abs(total)))


def test_generator_symmetric_in_sources():
    t, s1, s2 = 0.9, 0.3, 0.6
    assert np.isclose(generator_A(0.01, t, s1, s2), generator_A(0.01, t, s2, s1), rtol=1e-12)


def test_generator_rejects_bad_times():
    with pytest.raises(ValueError):
        generator_A(0.01, 0.5, 0.6, 0.1)
    with pytest.raises(ValueError):
        generator_A(0.01, 0.9, 0.6, 0.1, which=7)


@pytest.mark.parametrize("t,s1,s2", [(0.5, 0.2, 0.4), (1.0, 0.0, 0.9)])
def test_A1_small_eps_limit(t, s1, s2):
    eps = 1e-4
    a1 = generator_A(eps, t, s1, s2, which=1)
    assert abs(a1 - A1_limit(eps, t, s1, s2)) < 1e-8 * abs(a1)


def test_corrector_pieces_small_for_short_times():
    # H is exponentially small while the layers are thin compared with 1/2
    for k in (4, 5, 6):
        assert abs(generator_A(1e-3, 0.5, 0.3, 0.4, which=k)) < 1e-12


# --- assembly, residual and IO


def test_assembled_matrix_symmetric_and_cached():
    K = assemble_K_eps(0.03, 6)
    assert np.array_equal(K.values, K.values.T)
    assert assemble_K_eps(0.03, 6) is K
    with pytest.raises(ValueError):
        K.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        assemble_K_eps(0.0, 6)


def test_kernel_approaches_asymptotic_shape():
    # the relative gap shrinks with eps
    r = [residual_ratio(e, 8) / ASYMPTOTIC_FACTOR for e in (0.03, 0.003)]
    assert r[1] < r[0] < 1


def test_csv_roundtrip(tmp_path):
    K = assemble_K_eps(0.1, 5)
    path = tmp_path / "k.csv"
    kernel_to_csv(K, path)
    back = kernel_from_csv(path)
    assert np.array_equal(back.values, K.values)
    assert np.array_equal(back.nodes, K.nodes)
    assert back.meta["M"] == "5"
    assert path.read_text().splitlines()[0].startswith("M=5,eps=0.1,quad=")


# --- weakly singular diagnostics


def test_wsio_constant_of_riesz_kernel():
    L = lambda x, y: np.abs(x - y) ** -0.5
    est = estimate_wsio_kappa(L, samples=4000)
    assert np.isclose(est["est1"], 1.0)
    assert np.isfinite(est["kappa"])
    with pytest.raises(ValueError):
        estimate_wsio_kappa(L, delta=0.4)


def test_wsio_detects_stronger_singularity():
    L = lambda x, y: np.abs(x - y) ** -0.9
    small = estimate_wsio_kappa(L, samples=200)["est1"]
    large = estimate_wsio_kappa(L, samples=20000)["est1"]
    assert large > small


def test_wsio_samples_deterministic():
    a = estimate_wsio_kappa(lambda x, y: K0_value(x, y), samples=500, seed=3)
    b = estimate_wsio_kappa(lambda x, y: K0_value(x, y), samples=500, seed=3)
    assert a == b


def test_mixed_derivative_polynomial():
    L = lambda x, y: x**2 * y**3
    assert np.isclose(mixed_derivative(L, 0.3, 0.7, 1e-3), 6 * 0.3 * 0.7**2, rtol=1e-6)


def test_kernel_interpolant_reproduces_nodes():
    K = assemble_K0(16)
    f = kernel_from_matrix(K)
    assert np.allclose(f(K.nodes[3], K.nodes[9]), K.values[3, 9])


# --- integration by parts on the triangle


@pytest.mark.parametrize(
    "L",
    [
        lambda x, y: (1 - y) * (1 + x * y),
        lambda x, y: np.sin(1 - y) * np.exp(x),
        lambda x, y: (1 - y) ** 2 * (2 + np.sin(3 * x - y)),
    ],
)
def test_ibp_identity(L):
    u = Control.from_function(lambda t: np.cos(3 * t) + t, 2048)
    direct, transformed, _ = ibp_transform_check(L, u)
    assert abs(direct - transformed) < 1e-5 * max(1.0, abs(direct))


def test_ibp_requires_vanishing_edge():
    with pytest.raises(KernelBoundaryError):
        ibp_transform_check(lambda x, y: 1 + 0 * x, Control.zeros(8))


def test_ibp_boundary_term_closed_form():
    # L = (1-y)(1+xy): (d1 - d2)(s, s) = 1 + s^2, and U(s) = s for u = 1
    u = Control.from_function(lambda t: 1 + 0 * t, 256)
    _, _, boundary = ibp_transform_check(lambda x, y: (1 - y) * (1 + x * y), u)
    # second-order differences along the diagonal limit the agreement
    assert abs(boundary - 4 / 15) < 1e-6


def test_ibp_boundary_term_vanishes_for_balanced_kernel():
    u = Control.from_function(lambda t: np.cos(t), 256)
    assert abs(ibp_transform_check(lambda x, y: (1 - x) * (1 - y), u)[2]) < 1e-10


def test_kernel_from_generator_constant():
    # a = 1 gives L = 1 - max(s1, s2)
    L = kernel_from_generator(lambda t, s1, s2: np.ones_like(t + s1 + s2))
    assert np.isclose(L(0.2, 0.7), 0.3)


# --- extension


def test_extension_rules():
    K = lambda x, y: (1 + x) * (2 - y) + 0 * x
    Kbar = extend_kernel(K, s=0.5)
    assert np.isclose(Kbar(0.3, 0.4), K(0.3, 0.4))
    assert np.isclose(Kbar(0.5, 1.2), K(0.3, 1.0))
    assert np.isclose(Kbar(-0.2, 0.5), K(0.0, 0.7))
    assert np.isclose(Kbar(1.3, 0.6), K(1.0, 0.3))
    assert np.isclose(Kbar(0.5, -0.2), K(0.7, 0.0))
    assert np.isclose(Kbar(-1.0, 3.0), K(0.0, 1.0) * 4**-0.5)
    assert np.isclose(Kbar(3.0, -1.0), K(1.0, 0.0) * 4**-0.5)


def test_extension_continuous_across_strip_edge():
    Kbar = extend_kernel(K0_value)
    d = 1 - 1e-9
    assert np.isclose(Kbar(-0.5, -0.5 + d), Kbar(-0.5, 0.5 + 1e-9), rtol=1e-6)

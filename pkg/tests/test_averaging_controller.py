import itertools
import numpy as np
import pytest
from controllers.averaging_controller import QuadratureRule
from controllers.core_controller import DispersionField, PerturbationField
from errors import ConfigError, NumericalError


def test_one_dimensional_tensor_nodes(averaging):
    rule = averaging.make_quadrature(1, 4)
    assert np.allclose(rule.nodes[:, 0], [0, np.pi / 2, np.pi, 3 * np.pi / 2])
    assert np.allclose(rule.weights, 0.25)


@pytest.mark.parametrize("n,M,kind", [(2, 8, "tensor"), (3, 1024, "lattice"), (2, 100, "monte-carlo")])
def test_weights_sum_to_one(averaging, n, M, kind):
    rule = averaging.make_quadrature(n, M, kind)
    assert rule.n == n
    assert abs(np.sum(rule.weights) - 1.0) <= 1e-14
    assert np.all((rule.nodes >= 0) & (rule.nodes < 2 * np.pi))


def test_tensor_rule_is_exact_on_low_frequencies(averaging):
    rule = averaging.make_quadrature(2, 8)
    for s in itertools.product(range(-7, 8), repeat=2):
        value = averaging.integrate(rule, lambda w: np.exp(1j * (w @ np.array(s))))
        assert abs(value - (1.0 if s == (0, 0) else 0.0)) <= 1e-13


def test_tensor_rule_size_limit(averaging):
    with pytest.raises(ConfigError):
        averaging.make_quadrature(5, 32, "tensor")
    with pytest.raises(ConfigError):
        averaging.make_quadrature(2, 8, "sobol")


def test_average_of_diagonal_friction(averaging, rule8, rng):
    nu = np.array([1.0, 2.0])
    a = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    out = averaging.average_field(PerturbationField(P=lambda v: -nu * v), a, rule8)
    assert np.allclose(out, -nu * a, atol=1e-13)


def test_average_of_constant_field_vanishes(averaging, rule8):
    c = np.array([1.0 + 2j, -0.5])
    out = averaging.average_field(PerturbationField(P=lambda v: c), [0.3, 0.7j], rule8)
    assert np.allclose(out, 0.0, atol=1e-13)


def test_resonant_and_nonresonant_monomials(averaging, rule8, rng):
    a = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    cubic = PerturbationField(P=lambda v: np.abs(v) ** 2 * v)
    assert np.allclose(averaging.average_field(cubic, a, rule8), np.abs(a) ** 2 * a, atol=1e-12)
    square = PerturbationField(P=lambda v: v**2)
    assert np.max(np.abs(averaging.average_field(square, a, rule8))) <= 1e-14


def test_average_commutes_with_rotations(averaging, rng):
    rule = averaging.make_quadrature(2, 16)

    def P(v):
        v1, v2 = v[..., 0], v[..., 1]
        return np.stack([v1**2 * np.conj(v2) + v1 * np.abs(v2) ** 2, v2**2 + np.conj(v1)], axis=-1)

    field = PerturbationField(P=P)
    a = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    theta = rng.uniform(0, 2 * np.pi, size=2)
    lhs = averaging.average_field(field, np.exp(1j * theta) * a, rule)
    rhs = np.exp(1j * theta) * averaging.average_field(field, a, rule)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_average_is_a_projection(averaging, rule8, ou_model, rng):
    a = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    once = averaging.average_field(ou_model.P, a, rule8)
    averaged = PerturbationField(P=lambda v: averaging.average_field(ou_model.P, v, rule8))
    twice = averaging.average_field(averaged, a, rule8)
    assert np.allclose(once, twice, atol=1e-12)


def test_scalar_dispersion_average(averaging, rule8):
    diffusion = averaging.average_diffusion_state(DispersionField.constant(0.7 * np.eye(2)), [0.4, 1j], rule8)
    assert np.allclose(diffusion.K, 0.49 * np.eye(2), atol=1e-12)
    assert np.allclose(diffusion.root, 0.7 * np.eye(2), atol=1e-12)


def test_constant_dispersion_average_is_diagonal(averaging, rule8):
    B = DispersionField.constant([[1.0, 0.3], [0.0, 2.0]])
    diffusion = averaging.average_diffusion_state(B, [0.1, 0.2], rule8)
    assert np.allclose(diffusion.K, np.diag([1.09, 4.0]), atol=1e-12)
    assert np.allclose(diffusion.root @ np.conj(diffusion.root.T), diffusion.K, atol=1e-12)


def test_action_drift_examples(averaging):
    zero_B = DispersionField.diagonal([0.0, 0.0])
    v = np.array([1.0 + 1j, 0.5])
    assert np.allclose(averaging.action_drift(PerturbationField(P=lambda v: 0 * v), zero_B, v), 0.0)
    assert np.allclose(averaging.action_drift(PerturbationField(P=lambda v: -v), zero_B, v), -np.abs(v) ** 2)
    unit_B = DispersionField.constant(np.eye(2))
    assert np.allclose(averaging.action_drift(PerturbationField(P=lambda v: 0 * v), unit_B, v), 1.0)


def test_action_dispersion_vanishes_at_origin(averaging):
    G = averaging.action_dispersion(DispersionField.constant([[1.0, 0.2], [0.3j, 1.0]]), np.zeros(2))
    assert G.shape == (2, 4)
    assert np.all(G == 0)


def test_action_dispersion_matches_increment_variance(averaging):
    B = DispersionField.constant([[1.0, 0.4j], [0.2, 0.8]])
    v0 = np.array([0.9 - 0.3j, 0.2 + 0.7j])
    dtau = 1e-3
    rng = np.random.default_rng(9)
    z = rng.standard_normal((200_000, 2, 2)) * np.sqrt(dtau)
    dbeta = z[..., 0] + 1j * z[..., 1]
    v1 = v0 + dbeta @ B.matrix.T
    dI = 0.5 * np.abs(v1) ** 2 - 0.5 * np.abs(v0) ** 2
    G = averaging.action_dispersion(B, v0)
    assert np.var(dI, axis=0) / dtau == pytest.approx(np.sum(G**2, axis=-1), rel=0.03)


def test_constant_dispersion_averaged_action_root(averaging, rng):
    B = DispersionField.constant([[1.0, 0.3], [0.0, 2.0]])
    rule = averaging.make_quadrature(2, 32)
    I = rng.uniform(0.05, 3.0, size=(20, 2))
    _, diffusion = averaging.average_action_coefficients(PerturbationField(P=lambda v: -v), B, I, rule)
    expected = np.sqrt(2.0 * I * np.array([1.09, 4.0]))
    diag = np.diagonal(diffusion.root, axis1=-2, axis2=-1)
    assert np.allclose(diag, expected, rtol=1e-8)
    off = diffusion.root[:, 0, 1]
    assert np.max(np.abs(off)) <= 1e-10


def test_averaged_diffusion_degenerates_at_zero_action(averaging, rng):
    rule = averaging.make_quadrature(2, 16)
    B0 = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    fields = [
        DispersionField.constant(B0),
        DispersionField.constant(np.eye(2)),
        DispersionField(B=lambda v: B0 + 0.3 * v[..., :, None] * np.eye(2), n1=2),
    ]
    for B in fields:
        _, diffusion = averaging.average_action_coefficients(PerturbationField(P=lambda v: -v), B, [0.0, 0.8], rule)
        assert abs(np.linalg.det(diffusion.K)) <= 1e-10


def test_averaged_action_drift_with_ito_term(averaging):
    B = DispersionField.constant([[1.0, 0.3], [0.0, 2.0]])
    rule = averaging.make_quadrature(2, 2)
    I = np.array([0.4, 1.5])
    F, _ = averaging.average_action_coefficients(PerturbationField(P=lambda v: -v), B, I, rule)
    assert np.allclose(F, -2.0 * I + np.array([1.09, 4.0]), atol=1e-12)


def test_averages_do_not_depend_on_angle_representative(averaging, rule8, ou_model):
    shifted = QuadratureRule(
        nodes=np.mod(rule8.nodes + np.array([0.3, 1.1]), 2 * np.pi), weights=rule8.weights, kind="tensor"
    )
    I = np.array([0.7, 0.2])
    F, d = averaging.average_action_coefficients(ou_model.P, ou_model.B, I, rule8)
    F_shift, d_shift = averaging.average_action_coefficients(ou_model.P, ou_model.B, I, shifted)
    assert np.allclose(F, F_shift, atol=1e-10)
    assert np.allclose(d.K, d_shift.K, atol=1e-10)


def test_psd_sqrt(averaging, rng):
    assert np.allclose(averaging.psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    assert np.allclose(averaging.psd_sqrt(np.zeros((2, 2))), 0.0)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    K = A @ np.conj(A.T)
    root = averaging.psd_sqrt(K)
    assert np.allclose(root @ root, K, atol=1e-8)
    assert np.allclose(root, np.conj(root.T), atol=1e-12)


def test_psd_sqrt_clamps_small_negative_eigenvalues(averaging, messages):
    root = averaging.psd_sqrt(np.diag([1.0, -1e-9]))
    assert np.allclose(root, np.diag([1.0, 0.0]))
    assert any(m.startswith("WARNING") for m in messages)


def test_psd_sqrt_rejects_bad_matrices(averaging):
    with pytest.raises(NumericalError):
        averaging.psd_sqrt(np.diag([1.0, -1e-6]))
    with pytest.raises(NumericalError):
        averaging.psd_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))

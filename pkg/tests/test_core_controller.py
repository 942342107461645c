import numpy as np
import pytest
from controllers.core_controller import (
    ActionAngle,
    ComplexState,
    DispersionField,
    DomainBox,
    IntegrableHamiltonian,
    PerturbationField,
    complex_matrix,
    complex_vector,
    parse_complex,
)
from controllers.model_controller import coupling_hamiltonian
from errors import ConfigError, DimensionError, NumericalError


def half_norm(v):
    return 0.5 * np.sum(np.abs(v) ** 2, axis=-1)


def test_action_angle_of_known_state(core):
    aa = core.to_action_angle([1.0, 2j])
    assert np.allclose(aa.I, [0.5, 2.0])
    assert np.allclose(aa.phi, [0.0, np.pi / 2])


def test_zero_state_has_zero_angles(core):
    aa = core.to_action_angle(np.zeros(3))
    assert np.all(aa.I == 0)
    assert np.all(aa.phi == 0)


def test_state_round_trip(core, rng):
    v = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
    back = core.from_action_angle(core.to_action_angle(v)).v
    assert np.max(np.abs(back - v)) <= 1e-12


def test_action_angle_round_trip(core, rng):
    I = rng.uniform(0.01, 5.0, size=(50, 2))
    phi = rng.uniform(0.1, 2 * np.pi - 0.1, size=(50, 2))
    aa = core.to_action_angle(core.from_action_angle(ActionAngle(I=I, phi=phi)))
    assert np.allclose(aa.I, I, rtol=1e-12)
    assert np.allclose(aa.phi, phi, atol=1e-12)


def test_zero_action_maps_to_origin(core):
    v = core.from_action_angle(ActionAngle(I=[0.0, 0.0], phi=[1.0, 2.0])).v
    assert np.all(v == 0)


def test_negative_action_rejected():
    with pytest.raises(ConfigError):
        ActionAngle(I=[-1.0, 0.5], phi=[0.0, 0.0])


def test_non_finite_state_rejected():
    with pytest.raises(NumericalError):
        ComplexState([1.0, np.nan])


def test_rotation_by_quarter_and_half_turn(core):
    v = core.rotate([1.0, 1.0], [np.pi / 2, np.pi]).v
    assert np.allclose(v, [1j, -1.0], atol=1e-15)


def test_rotation_preserves_modulus_and_composes(core, rng):
    v = rng.standard_normal((20, 3)) + 1j * rng.standard_normal((20, 3))
    w1, w2 = rng.uniform(-10, 10, size=(2, 3))
    once = core.rotate(v, w1).v
    assert np.max(np.abs(np.abs(once) - np.abs(v))) <= 1e-14
    assert np.allclose(core.rotate(once, w2).v, core.rotate(v, w1 + w2).v, atol=1e-14)


def test_linear_flow_is_explicit_rotation(core, models):
    model = models.linear_model([1.0, np.sqrt(2.0)])
    v = np.array([0.3 + 0.4j, -1.0 + 0.2j])
    out = core.unperturbed_flow(v, model.H, 0.01, 0.37).v
    expected = np.exp(1j * np.array([1.0, np.sqrt(2.0)]) * 0.37 / 0.01) * v
    assert np.allclose(out, expected, atol=1e-12)
    assert np.array_equal(core.unperturbed_flow(v, model.H, 0.01, 0.0).v, v)


def test_flow_preserves_actions_and_composes(core, ou_model, rng):
    v = rng.standard_normal((10, 2)) + 1j * rng.standard_normal((10, 2))
    H, eps = ou_model.H, 0.05
    one = core.unperturbed_flow(v, H, eps, 0.3).v
    assert np.allclose(np.abs(one), np.abs(v), rtol=1e-14)
    two = core.unperturbed_flow(one, H, eps, 0.2).v
    assert np.allclose(two, core.unperturbed_flow(v, H, eps, 0.5).v, atol=1e-12)


def test_flow_returns_to_start_after_one_period(core, models):
    model = models.linear_model([1.0, np.sqrt(2.0)])
    eps = 0.01
    v = np.array([1.0 + 0.5j, 0.0])
    out = core.unperturbed_flow(v, model.H, eps, 2 * np.pi * eps).v
    assert abs(out[0] - v[0]) <= 1e-12


def test_flow_rejects_bad_eps(core, ou_model):
    with pytest.raises(ConfigError):
        core.unperturbed_flow([1.0, 1.0], ou_model.H, 0.0, 0.1)


def test_hamiltonian_field_of_half_norm(core, rng):
    v = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    field = core.hamiltonian_field(half_norm, v).v
    assert np.allclose(field, 1j * v, rtol=1e-5, atol=1e-8)


def test_hamiltonian_field_of_constant_is_zero(core):
    field = core.hamiltonian_field(lambda v: np.full(np.shape(v)[:-1], 3.0), [1.0, 2j]).v
    assert np.allclose(field, 0.0, atol=1e-12)


def test_finite_difference_field_matches_analytic(core, rng):
    h, h_grad = coupling_hamiltonian(0.1, 0.05)
    v = rng.uniform(-7, 7, size=(30, 3)) + 1j * rng.uniform(-7, 7, size=(30, 3))
    numeric = core.hamiltonian_field(h, v).v
    analytic = core.hamiltonian_field(h, v, h_grad).v
    assert np.max(np.abs(numeric - analytic)) / np.max(np.abs(analytic)) <= 1e-5


def test_hamiltonian_is_conserved_along_its_field(core, sde):
    h, h_grad = coupling_hamiltonian(0.1, 0.05)
    v0 = np.array([0.8 + 0.1j, -0.4 + 0.6j])
    _, states = sde.integrate_ode(lambda v: core.hamiltonian_field(h, v, h_grad).v, v0, 1.0, 1e-3)
    assert abs(h(states[-1]) - h(v0)) <= 1e-8


def test_rank_check_flags_singular_points(core):
    identity = core.check_rank(DispersionField.constant(np.eye(2)), np.ones((4, 2)))
    assert identity.passed

    def B(v):
        out = np.zeros(np.shape(v)[:-1] + (2, 2), dtype=np.complex128)
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = np.abs(v[..., 0])
        return out

    report = core.check_rank(DispersionField(B=B, n1=2), [[0.0, 1.0], [1.0, 1.0]])
    assert not report.passed
    assert report.flagged.tolist() == [0]


def test_rank_check_flags_zero_row(core):
    B = DispersionField.constant([[1.0, 0.0], [0.0, 0.0]])
    report = core.check_rank(B, np.ones((3, 2)))
    assert report.flagged.tolist() == [0, 1, 2]


def test_coercivity(core, ou_model, rng):
    samples = rng.standard_normal((100, 2)) + 1j * rng.standard_normal((100, 2))
    assert core.check_coercivity(PerturbationField(P=lambda v: -v), samples, 0.0, 0.0).passed
    assert not core.check_coercivity(PerturbationField(P=lambda v: v), samples, 0.0, 0.0).passed
    assert core.check_coercivity(ou_model.P, samples, 0.0, 0.0).passed
    rotating = PerturbationField.from_split(lambda v: -v, half_norm)
    assert core.check_coercivity(rotating, samples, 0.0, 0.0).passed


def test_resonance_scan_nonresonant_and_resonant(core, models, rng):
    I = rng.uniform(0.1, 2.0, size=(20, 2))
    generic = core.resonance_scan(models.linear_model([1.0, np.sqrt(2.0)]).H, I, 10)
    assert generic.passed
    assert np.all(generic.min_ratio > 1e-3)
    resonant = core.resonance_scan(models.linear_model([1.0, 1.0]).H, I, 10)
    assert not resonant.passed
    assert resonant.best_s[0].tolist() == [1, -1]


def test_resonance_scan_on_generic_actions(core, rng):
    H = IntegrableHamiltonian(n=2, H=lambda I: 0.5 * np.sum(np.asarray(I) ** 2, axis=-1))
    report = core.resonance_scan(H, rng.uniform(0.1, 2.0, size=(50, 2)), 10)
    assert report.near_resonant.size <= 5


def test_kolmogorov_check(core, models):
    I = [[0.5, 1.0], [1.5, 0.2]]
    quadratic = IntegrableHamiltonian(n=2, H=lambda I: 0.5 * np.sum(np.asarray(I) ** 2, axis=-1))
    report = core.kolmogorov_check(quadratic, I)
    assert report.passed
    assert np.allclose(report.determinants, 1.0, atol=1e-2)
    assert not core.kolmogorov_check(models.linear_model([1.0, 2.0]).H, I).passed


def test_frequency_gradient_check(core, ou_model, rng):
    assert core.check_frequency_gradient(ou_model.H, rng.uniform(0.1, 2.0, size=(10, 2))) <= 1e-5


def test_hamiltonian_split_residual(core, ou_model, rng):
    samples = rng.standard_normal((10, 2)) + 1j * rng.standard_normal((10, 2))
    assert core.check_hamiltonian_split(ou_model.P, samples) <= 1e-12
    with pytest.raises(ConfigError):
        core.check_hamiltonian_split(PerturbationField(P=lambda v: -v), samples)


def test_domain_box():
    box = DomainBox([1.0, 2.0])
    assert box.contains(np.array([1.0, -2.0]))
    assert not box.outside(np.array([1.0, 2j]))
    assert box.outside(np.array([[1.1, 0.0], [0.0, 0.5]])).tolist() == [True, False]
    with pytest.raises(ConfigError):
        DomainBox([1.0, 0.0])


def test_dispersion_column_count_checked():
    B = DispersionField(B=lambda v: np.eye(2), n1=3)
    with pytest.raises(DimensionError):
        B(np.ones(2))


def test_complex_parsing():
    assert parse_complex("1+0.5j") == 1 + 0.5j
    assert parse_complex([1, 2]) == 1 + 2j
    assert parse_complex(3) == 3 + 0j
    assert np.array_equal(complex_vector([1.0, "0+1j", [0.5, 0.5]]), [1.0, 1j, 0.5 + 0.5j])
    with pytest.raises(ConfigError):
        parse_complex("one")
    with pytest.raises(DimensionError):
        complex_matrix([[1, 0], [0]])

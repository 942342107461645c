import numpy as np
import pytest
from controllers.model_controller import ModelIngredients, OuActionLaw, OuParameters
from controllers.sde_controller import PathConfig, path_generator
from errors import ConfigError, DimensionError


def test_registry(models):
    assert models.available() == ["chain_quartic", "damped_driven", "linear"]
    with pytest.raises(ConfigError):
        models.build("pendulum")


def test_register_custom_model(models):
    def factory(params):
        base = models.linear_model([float(params.get("rate", 2.0))])
        return ModelIngredients(key="custom", H=base.H, P=base.P, B=base.B, params=params)

    models.register("custom", factory)
    assert models.build("custom", {"rate": 3.0}).H.frequencies(np.array([0.5])) == pytest.approx([3.0])
    with pytest.raises(ConfigError):
        models.register("custom", factory)
    models.register("custom", factory, replace=True)


def test_factory_must_return_ingredients(models):
    models.register("broken", lambda params: None)
    with pytest.raises(ConfigError):
        models.build("broken")


def test_linear_model_defaults(models):
    model = models.build("linear")
    assert model.n == 2
    assert np.allclose(model.H.frequencies(np.array([0.3, 0.1])), [1.0, np.sqrt(2.0)])
    assert np.allclose(model.P(np.array([1.0, 2.0])), [-1.0, -2.0])


def test_linear_model_resonances(core, models, rng):
    I = rng.uniform(0.1, 2.0, size=(10, 2))
    assert core.resonance_scan(models.linear_model([1.0, np.sqrt(2.0)]).H, I, 20).passed
    assert not core.resonance_scan(models.linear_model([1.0, 1.0]).H, I, 20).passed


def test_dispersion_matrix_override(core, models):
    model = models.build("linear", {"lambda": [1.0, 1.0], "dispersion_matrix": [[1, 0], [0, 0]]})
    assert np.array_equal(model.B.matrix, [[1, 0], [0, 0]])
    assert not core.check_rank(model.B, np.ones((2, 2))).passed
    with pytest.raises(DimensionError):
        models.build("linear", {"dispersion_matrix": [[1, 0, 0]]})


def test_damped_driven_split_and_coercivity(core, ou_model, rng):
    samples = rng.standard_normal((200, 2)) + 1j * rng.standard_normal((200, 2))
    assert ou_model.P.has_split
    assert core.check_hamiltonian_split(ou_model.P, samples) <= 1e-12
    assert core.check_coercivity(ou_model.P, samples, 0.0, 0.0).passed
    assert core.check_frequency_gradient(ou_model.H, rng.uniform(0.1, 2.0, size=(10, 2))) <= 1e-5


def test_uncoupled_action_sde_decouples(averaging, models):
    model = models.build("damped_driven", {"kappa": 0.0, "mu": 0.0})
    v = np.array([0.8 - 0.2j, 0.3 + 0.5j])
    G = averaging.action_dispersion(model.B, v)
    assert G[0, 1] == 0 and G[0, 3] == 0
    assert G[1, 0] == 0 and G[1, 2] == 0
    F = averaging.action_drift(model.P, model.B, v)
    assert np.allclose(F, -np.array([1.0, 2.0]) * np.abs(v) ** 2 + np.array([1.0, 0.25]))


def test_ou_parameters_validation():
    with pytest.raises(ConfigError):
        OuParameters(nu=[1.0, 0.0], b=[1.0, 1.0])
    with pytest.raises(ConfigError):
        OuParameters(nu=[1.0], b=[0.0])
    with pytest.raises(DimensionError):
        OuParameters(nu=[1.0, 2.0], b=[1.0])


def test_ou_law_means_and_scaling(models):
    law = models.ou_exact_action_law(OuParameters(nu=[1.0, 2.0], b=[1.0, 0.5]))
    assert np.allclose(law.means, [0.5, 0.0625])
    scaled = OuActionLaw(OuParameters(nu=[3.0, 6.0], b=np.sqrt(3.0) * np.array([1.0, 0.5])))
    assert np.allclose(scaled.means, law.means)


def test_ou_law_quantile_inverts_cdf(models):
    law = models.ou_exact_action_law(OuParameters(nu=[1.0, 2.0], b=[1.0, 0.5]))
    u = np.linspace(0.01, 0.99, 25)
    assert law.quantile(u).shape == (25, 2)
    assert np.allclose(law.cdf(law.quantile(u)), u[:, None])


def test_ou_law_samples(models):
    law = models.ou_exact_action_law(OuParameters(nu=[1.0, 2.0], b=[1.0, 0.5]))
    samples = law.sample(100_000, seed=1)
    assert np.allclose(np.mean(samples, axis=0), law.means, rtol=0.02)
    assert np.array_equal(samples, law.sample(100_000, seed=1))


def test_ou_second_moment_limits(models):
    law = models.ou_exact_action_law(OuParameters(nu=[1.0, 2.0], b=[1.0, 0.5]))
    a0 = np.array([1.0 + 1j, 0.5])
    assert np.allclose(law.second_moment(a0, 0.0), np.abs(a0) ** 2)
    assert np.allclose(law.second_moment(a0, 50.0), [1.0, 0.125])


def test_ou_transition_matches_second_moment(models):
    law = models.ou_exact_action_law(OuParameters(nu=[1.0, 2.0], b=[1.0, 0.5]))
    a0 = np.array([1.0, 1.0 + 0j])
    rng = np.random.default_rng(3)
    a = law.transition(np.broadcast_to(a0, (50_000, 2)), 0.4, rng)
    empirical = np.mean(np.abs(a) ** 2, axis=0)
    stderr = np.std(np.abs(a) ** 2, axis=0) / np.sqrt(50_000)
    assert np.all(np.abs(empirical - law.second_moment(a0, 0.4)) <= 4 * stderr)


def test_modified_effective_second_moment_follows_ou_law(equations, ensemble, models, ou_model, rule8):
    sys = equations.build_effective_modified(ou_model.P.P1, ou_model.P.h, ou_model.B, rule8)
    ens = ensemble.run_ensemble(sys, np.array([1.0, 1.0]), 4000, PathConfig(dtau=0.01, T=1.0, seed=5), [1.0])
    a = ens.snapshots[-1]
    empirical = np.mean(np.abs(a) ** 2, axis=0)
    stderr = np.std(np.abs(a) ** 2, axis=0) / np.sqrt(a.shape[0])
    exact = models.ou_exact_action_law(ou_model.ou).second_moment(np.array([1.0, 1.0]), 1.0)
    assert np.all(np.abs(empirical - exact) <= 4 * stderr + 0.02 * exact)


def test_full_system_second_moment_follows_ou_law(equations, ensemble, models, ou_model):
    sys = equations.build_full(ou_model.H, ou_model.P, ou_model.B, 0.01)
    x0 = np.array([2.0, 1.0])
    ens = ensemble.run_ensemble(sys, x0, 2000, PathConfig(dtau=1e-3, T=1.0, seed=11), [1.0])
    a = ens.snapshots[-1]
    empirical = np.mean(np.abs(a) ** 2, axis=0)
    stderr = np.std(np.abs(a) ** 2, axis=0) / np.sqrt(a.shape[0])
    exact = models.ou_exact_action_law(ou_model.ou).second_moment(x0, 1.0)
    assert np.all(np.abs(empirical - exact) <= 4 * stderr + 0.02 * exact)


def test_harmonic_chain_is_linear(models):
    from controllers.oscillator_controller import OscillatorPotential

    model = models.chain_model(OscillatorPotential.harmonic(4.0), 2, E_max=20.0)
    I = np.array([[0.3, 1.2], [2.0, 0.01]])
    assert np.allclose(model.H.frequencies(I), 2.0, rtol=1e-8)
    assert np.allclose(model.H.energy(I), 2.0 * np.sum(I, axis=-1), rtol=1e-8)


def test_quartic_chain_frequencies(core, models):
    model = models.build("chain_quartic", {"n": 2, "alpha": 1.0, "beta": 0.5, "E_max": 20.0})
    freqs = model.H.frequencies(np.array([0.5, 1.5]))
    assert 1.0 < freqs[0] < freqs[1]
    assert core.kolmogorov_check(model.H, [[0.5, 1.5], [1.0, 0.3]]).passed


def test_single_site_chain_matches_oscillator(models, oscillator):
    model = models.build("chain_quartic", {"n": 1, "E_max": 20.0})
    E = oscillator.energy_of_action(model.potential, 0.8)
    assert model.H.energy(np.array([0.8])) == pytest.approx(E, rel=1e-6)


def test_chain_paths_reproducible(equations, models, sde):
    model = models.build("chain_quartic", {"n": 2, "E_max": 20.0})
    sys = equations.build_full(model.H, model.P, model.B, 0.1)
    gens = lambda: [path_generator(0, i) for i in range(4)]
    cfg = PathConfig(dtau=0.01, T=0.2)
    a = sde.integrate_batch(sys, np.array([0.5, 0.5j]), gens(), cfg, [20])
    b = sde.integrate_batch(sys, np.array([0.5, 0.5j]), gens(), cfg, [20])
    assert np.array_equal(a.states, b.states)

import numpy as np
import pytest
from injector import Injector
from di.app_module import DynamicAppModule
from controllers.averaging_controller import AveragingController
from controllers.config_controller import ConfigController
from controllers.core_controller import CoreController
from controllers.display_controller import DisplayController
from controllers.ensemble_controller import EnsembleController
from controllers.equation_controller import EquationController
from controllers.experiment_controller import ExperimentController
from controllers.export_controller import ExportController
from controllers.log_controller import LogController
from controllers.model_controller import ModelController
from controllers.oscillator_controller import OscillatorController
from controllers.sde_controller import SdeController


@pytest.fixture
def injector():
    return Injector([DynamicAppModule()])


@pytest.fixture
def log_controller(injector):
    return injector.get(LogController)


@pytest.fixture
def messages(log_controller):
    collected = []
    log_controller.add_listener(collected.append)
    return collected


@pytest.fixture
def core(injector):
    return injector.get(CoreController)


@pytest.fixture
def averaging(injector):
    return injector.get(AveragingController)


@pytest.fixture
def sde(injector):
    return injector.get(SdeController)


@pytest.fixture
def equations(injector):
    return injector.get(EquationController)


@pytest.fixture
def ensemble(injector):
    return injector.get(EnsembleController)


@pytest.fixture
def models(injector):
    return injector.get(ModelController)


@pytest.fixture
def oscillator(injector):
    return injector.get(OscillatorController)


@pytest.fixture
def display(injector):
    return injector.get(DisplayController)


@pytest.fixture
def export(injector):
    return injector.get(ExportController)


@pytest.fixture
def config_controller(injector):
    return injector.get(ConfigController)


@pytest.fixture
def experiments(injector):
    return injector.get(ExperimentController)


@pytest.fixture
def ou_model(models):
    """Damped/driven model with nu = (1, 2), b = (1, 0.5) and the default coupling h"""
    return models.build("damped_driven", {"nu": [1.0, 2.0], "b": [1.0, 0.5]})


@pytest.fixture
def rule8(averaging):
    return averaging.make_quadrature(2, 8, "tensor")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

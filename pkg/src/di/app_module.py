from injector import Module
from typing import Dict, Optional
import importlib

# interface name -> implementation, resolved by dotted path
DEPENDENCY_CONFIG = {
    'LogController': 'controllers.log_controller.LogController',
    'CoreController': 'controllers.core_controller.CoreController',
    'AveragingController': 'controllers.averaging_controller.AveragingController',
    'SdeController': 'controllers.sde_controller.SdeController',
    'EquationController': 'controllers.equation_controller.EquationController',
    'EnsembleController': 'controllers.ensemble_controller.EnsembleController',
    'OscillatorController': 'controllers.oscillator_controller.OscillatorController',
    'ModelController': 'controllers.model_controller.ModelController',
    'DisplayController': 'controllers.display_controller.DisplayController',
    'ExportController': 'controllers.export_controller.ExportController',
    'ConfigController': 'controllers.config_controller.ConfigController',
    'ExperimentController': 'controllers.experiment_controller.ExperimentController',
}


class DynamicAppModule(Module):
    def __init__(self, config: Optional[Dict[str, str]] = None):
        self.config = DEPENDENCY_CONFIG if config is None else config
        super().__init__()

    def configure(self, binder):
        for interface, implementation in self.config.items():
            module_path, class_name = implementation.rsplit('.', 1)
            module = importlib.import_module(module_path)
            cls = getattr(module, class_name)
            binder.bind(interface, to=cls)

from .config import ConfigError, KINDS, load_config, validate_config
from .experiments import ExperimentError, run_experiment
from .noise import IdealPipeline, NoiseModel, Pipeline, apply_noise_model, realize
from .report import RunReport, emit_report, render

__all__ = [
    "ConfigError",
    "ExperimentError",
    "IdealPipeline",
    "KINDS",
    "NoiseModel",
    "Pipeline",
    "RunReport",
    "apply_noise_model",
    "emit_report",
    "load_config",
    "realize",
    "render",
    "run_experiment",
    "validate_config",
]

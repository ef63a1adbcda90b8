from .config import ExperimentConfig, parse_config, load_config
from .data import Sample, gen_synthetic, load_cifar_binary
from .runner import run_experiment

__all__ = [
    "ExperimentConfig",
    "Sample",
    "gen_synthetic",
    "load_cifar_binary",
    "load_config",
    "parse_config",
    "run_experiment",
]

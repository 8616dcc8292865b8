"""Experiment harness: configs, scenarios, reports and the command line."""

from kinhom.harness.config import ExperimentConfig, load_config, parse_config
from kinhom.harness.runner import RunResult, run, verify
from kinhom.harness.scenarios import list_scenarios

__all__ = ["ExperimentConfig", "RunResult", "list_scenarios", "load_config", "parse_config", "run",
           "verify"]

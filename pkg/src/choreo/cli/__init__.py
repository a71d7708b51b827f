"""Front end: configuration, scenarios, peak extraction, service, CLI.

The configuration format and its schema live in config.py; scenario names
and the stability pipeline in scenarios.py; the HTTP facade in service.py;
the console entry point in main.py.
"""

from .config import (ConfigError, dump_config, flatten, get, load_config,
                     parse_config, put, validate_keys)
from .scenarios import (SCENARIO_NAMES, Scenario, StabilityReport,
                        run_scenario, sweep_grid_from_config, sweep_scenarios)
from .signal import FrequencyPeak, freq_extract

__all__ = [
    "ConfigError", "dump_config", "flatten", "get", "load_config",
    "parse_config", "put", "validate_keys",
    "SCENARIO_NAMES", "Scenario", "StabilityReport", "run_scenario",
    "sweep_grid_from_config", "sweep_scenarios",
    "FrequencyPeak", "freq_extract",
]

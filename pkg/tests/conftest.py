from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from execkit.config import load_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

settings.register_profile(
    "suite",
    max_examples=40,
    deadline=None,
    suppress_health_check=[
        HealthCheck.too_slow,
        HealthCheck.filter_too_much,
        HealthCheck.data_too_large,
    ],
)
settings.load_profile("suite")

# one line per acceptance criterion, printed in the terminal summary
_CRITERIA: list[tuple[int, bool, str]] = []


def record_criterion(n: int, passed: bool, detail: str) -> None:
    _CRITERIA.append((n, passed, detail))
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, passed, detail in sorted(_CRITERIA):
        terminalreporter.write_line(
            f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}"
        )


@pytest.fixture(scope="session")
def three_asset_cfg():
    return load_config(CONFIG_DIR / "three_asset_two_regime.yaml")


@pytest.fixture(scope="session")
def ten_asset_cfg():
    return load_config(CONFIG_DIR / "ten_asset_two_regime.yaml")


@pytest.fixture(scope="session")
def single_return_cfg():
    return load_config(CONFIG_DIR / "single_asset_return_switch.yaml")


@pytest.fixture(scope="session")
def liquidity_cfg():
    return load_config(CONFIG_DIR / "single_asset_liquidity_switch.yaml")


@pytest.fixture(scope="session")
def four_regime_cfg():
    return load_config(CONFIG_DIR / "three_asset_four_regime.yaml")


@pytest.fixture(scope="session")
def t20_cfg():
    return load_config(CONFIG_DIR / "three_asset_two_regime_t20.yaml")


TINY_YAML = """\
format_version: 1
name: tiny_two_asset
n_assets: 2
n_regimes: 2
horizon: 4
initial_prices_usd: [1.0, 2.0]
initial_chunks: [6, 10]
transition:
- [0.9, 0.1]
- [0.2, 0.8]
objective: {kind: crra, gamma: -1.0}
regimes:
- mean_return_per_period: [0.004, 0.002]
  return_cov_per_period:
  - [2.5e-05, 5.0e-06]
  - [5.0e-06, 1.6e-05]
  temp_impact_per_chunk:
  - [0.002, 0.0004]
  - [0.0004, 0.0026]
  temp_impact_per_chunk_sq:
  - [0.0001, 2.0e-05]
  - [2.0e-05, 0.00013]
  perm_impact_per_chunk:
  - [0.0001, 1.0e-05]
  - [1.0e-05, 0.00014]
  perm_impact_per_chunk_sq:
  - [0.0002, 2.0e-05]
  - [2.0e-05, 0.00026]
- mean_return_per_period: [-0.003, -0.001]
  return_cov_per_period:
  - [3.0e-05, 6.0e-06]
  - [6.0e-06, 2.0e-05]
  temp_impact_per_chunk:
  - [0.004, 0.0008]
  - [0.0008, 0.0052]
  temp_impact_per_chunk_sq:
  - [0.0002, 4.0e-05]
  - [4.0e-05, 0.00026]
  perm_impact_per_chunk:
  - [0.0002, 2.0e-05]
  - [2.0e-05, 0.00028]
  perm_impact_per_chunk_sq:
  - [0.0003, 3.0e-05]
  - [3.0e-05, 0.00039]
pipeline:
  hidden_units: 3
  dp_samples: 200
  dp_iterations: 1
  eval_paths: 300
  train_steps: 40
  batch_size: 32
  pretrain_steps: 80
  pretrain_states: 200
  lr: 0.002
"""


@pytest.fixture(scope="session")
def tiny_cfg_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cfg") / "tiny_two_asset.yaml"
    path.write_text(TINY_YAML)
    return path


@pytest.fixture(scope="session")
def tiny_cfg(tiny_cfg_path):
    return load_config(tiny_cfg_path)

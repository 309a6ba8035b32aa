# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import json
import math

import pytest
from pytorch_lightning.utilities.exceptions import MisconfigurationException

from fractional_stnp.ansatz import BoundaryKind
from fractional_stnp.config import (
    build_ansatz,
    build_model,
    build_oracle_config,
    build_stepper,
    config_hash,
    load_run_config,
    ModelKind,
    RunConfig,
    save_run_config,
)
from fractional_stnp.fracops import SchemeOrder
from fractional_stnp.models import FbeflConfig, FbennConfig
from fractional_stnp.timestepping import Scheme


def _write(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_run_config(_write(tmp_path, ""))
    assert cfg == RunConfig()
    model = build_model(cfg)
    assert isinstance(model, FbeflConfig)
    assert model.epsilon == 0.01 and model.gl_order is SchemeOrder.SECOND


def test_json_and_enum_names(tmp_path):
    content = {"model": {"kind": "FBENN", "beta": 0.6}, "stepper": {"scheme": "RK45"}, "grid": {"n_points": 100}}
    cfg = load_run_config(_write(tmp_path, json.dumps(content), "config.json"))
    assert cfg.model.kind is ModelKind.FBENN
    model = build_model(cfg)
    assert isinstance(model, FbennConfig)
    assert model.epsilon == pytest.approx(1 / (150 * math.pi))
    assert build_stepper(cfg).scheme is Scheme.RK45
    assert build_stepper(cfg, Scheme.SSP_RK3).scheme is Scheme.SSP_RK3
    oracle = build_oracle_config(cfg)
    assert oracle.beta == 0.6 and oracle.t_max == 1.0


def test_overrides_take_precedence(tmp_path):
    cfg = load_run_config(_write(tmp_path, "ansatz:\n  seed: 3\n"), {"ansatz": {"seed": 9}})
    assert cfg.ansatz.seed == 9


def test_depth_sets_hidden_layers(tmp_path):
    cfg = load_run_config(_write(tmp_path, "ansatz:\n  depth: 3\n  width: 4\n"))
    spec = build_ansatz(cfg)
    assert spec.layer_widths == (1, 4, 4, 4, 1)
    assert spec.bc.kind is BoundaryKind.DIRICHLET
    assert (spec.bc.a, spec.bc.b) == (-1.0, 1.0)


@pytest.mark.parametrize(
    "text, match",
    [
        ("model:\n  gl_order: 3\n", "gl_order"),
        ("model:\n  kind: FBENN\n  manufactured: true\n", "only defined for FBEFL"),
        ("model:\n  manufactured: true\n", r"\[0, 1\]"),
        ("ansatz:\n  depth: 0\n", "depth"),
        ("output:\n  snapshot_times: [-1.0]\n", "nonnegative"),
        ("ensemble:\n  size: 0\n", "ensemble.size"),
        ("oracle:\n  check_classical: true\n", "beta = 1"),
        ("compare:\n  central_n: 1\n", "three nodes"),
        ("compare:\n  dt: 0.0\n", "positive step"),
        ("sweep:\n  n_points: [2, 10]\n", "sweep.n_points"),
        ("sweep:\n  gl_orders: [3]\n", "sweep.gl_orders"),
        ("grid:\n  n_points: 20\n  n_points: 30\n", "Duplicate key"),
        ("fit:\n  learning_rate: 0.1\n", "Invalid configuration"),
    ],
)
def test_validation(tmp_path, text, match):
    with pytest.raises(MisconfigurationException, match=match):
        load_run_config(_write(tmp_path, text))


def test_invalid_model_values(tmp_path):
    cfg = load_run_config(_write(tmp_path, "model:\n  alpha: 2.5\n"))
    with pytest.raises(MisconfigurationException, match="Invalid model section"):
        build_model(cfg)


def test_coarse_oracle_warns(tmp_path):
    with pytest.warns(UserWarning, match="coarser than four times"):
        load_run_config(_write(tmp_path, "model:\n  kind: FBENN\noracle:\n  fine_n: 201\n"))


def test_saved_config_reloads(tmp_path):
    cfg = load_run_config(_write(tmp_path, "model:\n  alpha: 1.4\nstepper:\n  scheme: RK45\n"))
    path = save_run_config(cfg, tmp_path / "out" / "config.yaml")
    again = load_run_config(path)
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert config_hash(load_run_config(_write(tmp_path, "model:\n  alpha: 1.5\n", "other.yaml"))) != config_hash(cfg)

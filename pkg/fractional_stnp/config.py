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
r"""
Run Configuration
^^^^^^^^^^^^^^^^^

Structured schema of experiment configuration files, loading with duplicate-key and unknown-key rejection, and
translation of a loaded configuration into the numerical components.

"""
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import torch
import yaml
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException
from pytorch_lightning.utilities import rank_zero_warn
from pytorch_lightning.utilities.exceptions import MisconfigurationException

from fractional_stnp.ansatz import AnsatzSpec, BoundaryKind, BoundaryWrapper, FeatureMap, OptimizerConfig
from fractional_stnp.exceptions import DomainError
from fractional_stnp.fracops import SchemeOrder, UniformGrid
from fractional_stnp.models import FbeflConfig, FbennConfig, manufactured_config, manufactured_solution, ModelConfig
from fractional_stnp.projection import ProjectionConfig, ProjectionSolver, Weighting
from fractional_stnp.reference import BoundaryTrace, HopfColeConfig
from fractional_stnp.timestepping import Scheme, StepperConfig

log = logging.getLogger(__name__)


class ModelKind(Enum):
    FBEFL = "fbefl"
    FBENN = "fbenn"


class InitialKind(Enum):
    NEG_SIN_PI = "neg_sin_pi"
    MANUFACTURED = "manufactured"
    ZERO = "zero"


def neg_sin_pi(x: torch.Tensor) -> torch.Tensor:
    return -torch.sin(math.pi * x)


def manufactured_initial(x: torch.Tensor) -> torch.Tensor:
    return manufactured_solution(x, 0.0)


def zero_initial(x: torch.Tensor) -> torch.Tensor:
    return torch.zeros_like(x)


INITIAL_CONDITIONS: Dict[InitialKind, Callable[[torch.Tensor], torch.Tensor]] = {
    InitialKind.NEG_SIN_PI: neg_sin_pi,
    InitialKind.MANUFACTURED: manufactured_initial,
    InitialKind.ZERO: zero_initial,
}


@dataclass
class ModelSection:
    """``epsilon`` defaults to 0.01 for FBEFL and ``1 / (150 pi)`` for FBENN. ``manufactured`` switches FBEFL to the
    manufactured forcing on ``[0, 1]``."""

    kind: ModelKind = ModelKind.FBEFL
    alpha: float = 1.6
    beta: float = 0.8
    epsilon: Optional[float] = None
    gl_order: int = 2
    manufactured: bool = False
    initial_condition: InitialKind = InitialKind.NEG_SIN_PI


@dataclass
class GridSection:
    a: float = -1.0
    b: float = 1.0
    n_points: int = 300


@dataclass
class AnsatzSection:
    """``depth`` (hidden layers of ``width`` units) overrides ``widths`` when set."""

    widths: List[int] = field(default_factory=lambda: [1, 10, 10, 1])
    depth: Optional[int] = None
    width: int = 10
    seed: int = 0
    bc: BoundaryKind = BoundaryKind.DIRICHLET
    feature_map: FeatureMap = FeatureMap.IDENTITY
    period: float = 2.0


@dataclass
class ProjectionSection:
    lam: Optional[float] = None
    relative_lambda: float = 1e-6
    solver: ProjectionSolver = ProjectionSolver.STACKED_QR
    weighting: Weighting = Weighting.TRAPEZOID
    svd_limit: int = 512


@dataclass
class StepperSection:
    scheme: Scheme = Scheme.SSP_RK3
    dt: float = 1e-3
    t_end: float = 1.0
    abs_tol: float = 1e-6
    rel_tol: float = 1e-4
    dt_min: float = 1e-8
    dt_max: float = 0.1
    safety: float = 0.9
    record_stages: bool = False


@dataclass
class OutputSection:
    directory: str = "stnp_output"
    snapshot_times: List[float] = field(default_factory=lambda: [0.5, 1.0])
    checkpoint_every: int = 0
    proxy_every: int = 1
    test_points: int = 512


@dataclass
class OracleSection:
    """Hopf-Cole oracle resolution; ``cache_dir`` defaults to ``oracle_cache`` inside the output directory."""

    fine_n: int = 2001
    quad_n: int = 2001
    y_extent: Optional[float] = None
    cache_dir: Optional[str] = None
    boundary_samples: int = 101
    check_classical: bool = False


@dataclass
class SweepSection:
    n_points: List[int] = field(default_factory=lambda: [5, 10, 20, 40, 50, 100, 200, 400, 800, 1000])
    gl_orders: List[int] = field(default_factory=lambda: [1, 2])
    depths: List[int] = field(default_factory=lambda: [3, 5, 7])


@dataclass
class CompareSection:
    central_n: int = 201
    upwind_n: int = 1601
    dt: float = 1e-4


@dataclass
class EnsembleSection:
    size: int = 1
    schemes: List[Scheme] = field(default_factory=lambda: [Scheme.SSP_RK3])


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    ansatz: AnsatzSection = field(default_factory=AnsatzSection)
    fit: OptimizerConfig = field(default_factory=OptimizerConfig)
    projection: ProjectionSection = field(default_factory=ProjectionSection)
    stepper: StepperSection = field(default_factory=StepperSection)
    output: OutputSection = field(default_factory=OutputSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    compare: CompareSection = field(default_factory=CompareSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)


class UniqueKeyLoader(yaml.SafeLoader):
    """Alters SafeLoader to enable duplicate key detection by the SafeConstructor."""

    def construct_mapping(self, node: yaml.MappingNode, deep: bool = False) -> Dict:
        """Overrides the construct_mapping method of the SafeConstructor to raise a ValueError if duplicate keys
        are found."""
        seen = set()
        for key_node, _ in node.value:
            key = self.construct_object(key_node, deep=deep)
            if key in seen:
                raise ValueError(key)
            seen.add(key)
        return super().construct_mapping(node, deep)


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path) as fp:
            raw = yaml.load(fp, Loader=UniqueKeyLoader)
    except FileNotFoundError as fnf:
        raise MisconfigurationException(f"Could not find the specified configuration file '{path}': {fnf}.")
    except ValueError as dup_key:
        raise MisconfigurationException(f"Duplicate key ({dup_key.args[0]}) found in configuration file '{path}'.")
    except yaml.YAMLError as err:
        raise MisconfigurationException(f"Could not parse configuration file '{path}': {err}")
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise MisconfigurationException(f"Configuration file '{path}' must contain a mapping at the top level.")
    return raw


def load_run_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load a YAML (or JSON) run configuration onto the :class:`RunConfig` schema.

    Args:
        path: Configuration file.
        overrides: Nested mapping merged on top of the file, e.g. from command-line flags.

    Raises:
        MisconfigurationException: If the file is missing, unparsable, has duplicate or unknown keys, mistyped values
            or inconsistent sections.
    """
    raw = _read_yaml(Path(path))
    try:
        merged = OmegaConf.merge(OmegaConf.structured(RunConfig), raw, overrides or {})
        cfg = OmegaConf.to_object(merged)
    except OmegaConfBaseException as err:
        raise MisconfigurationException(f"Invalid configuration in '{path}': {err}")
    assert isinstance(cfg, RunConfig)
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    """Cross-section checks that the schema cannot express."""
    if cfg.model.gl_order not in (1, 2):
        raise MisconfigurationException(f"gl_order must be 1 or 2, got {cfg.model.gl_order}.")
    if cfg.model.manufactured and cfg.model.kind is not ModelKind.FBEFL:
        raise MisconfigurationException("The manufactured forcing is only defined for FBEFL.")
    if cfg.model.manufactured and (cfg.grid.a, cfg.grid.b) != (0.0, 1.0):
        raise MisconfigurationException("The manufactured solution lives on the grid [0, 1].")
    if cfg.ansatz.depth is not None and cfg.ansatz.depth < 1:
        raise MisconfigurationException(f"The ansatz depth must be positive, got {cfg.ansatz.depth}.")
    if any(t < 0 for t in cfg.output.snapshot_times):
        raise MisconfigurationException("Snapshot times must be nonnegative.")
    if cfg.output.test_points < 2 or cfg.ensemble.size < 1:
        raise MisconfigurationException("output.test_points must be at least 2 and ensemble.size at least 1.")
    if min(cfg.compare.central_n, cfg.compare.upwind_n) < 3 or not cfg.compare.dt > 0:
        raise MisconfigurationException(
            "The comparison grids need at least three nodes and a positive step, got "
            f"central_n={cfg.compare.central_n}, upwind_n={cfg.compare.upwind_n}, dt={cfg.compare.dt}."
        )
    if not cfg.sweep.n_points or min(cfg.sweep.n_points) < 3:
        raise MisconfigurationException(
            f"sweep.n_points must list grids of at least three nodes, got {cfg.sweep.n_points}."
        )
    if any(order not in (1, 2) for order in cfg.sweep.gl_orders) or any(d < 1 for d in cfg.sweep.depths):
        raise MisconfigurationException("sweep.gl_orders must be 1 or 2 and sweep.depths positive.")
    if cfg.oracle.check_classical and not (cfg.model.kind is ModelKind.FBENN and cfg.model.beta == 1):
        raise MisconfigurationException("check_classical requires an FBENN model with beta = 1.")
    if cfg.model.kind is ModelKind.FBENN and cfg.oracle.fine_n < 4 * cfg.grid.n_points:
        rank_zero_warn(
            f"The oracle grid ({cfg.oracle.fine_n} nodes) is coarser than four times the collocation grid "
            f"({cfg.grid.n_points} nodes)."
        )


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(OmegaConf.to_yaml(OmegaConf.structured(cfg)).encode()).hexdigest()


def save_run_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    """Write the resolved configuration, defaults included."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    OmegaConf.save(OmegaConf.structured(cfg), path)
    return path


def initial_condition(cfg: RunConfig) -> Callable[[torch.Tensor], torch.Tensor]:
    return INITIAL_CONDITIONS[cfg.model.initial_condition]


def build_model(cfg: RunConfig) -> ModelConfig:
    m = cfg.model
    try:
        if m.kind is ModelKind.FBENN:
            return FbennConfig(beta=m.beta, epsilon=1 / (150 * math.pi) if m.epsilon is None else m.epsilon)
        epsilon = 0.01 if m.epsilon is None else m.epsilon
        if m.manufactured:
            return manufactured_config(m.alpha, epsilon, SchemeOrder(m.gl_order))
        return FbeflConfig(alpha=m.alpha, epsilon=epsilon, gl_order=SchemeOrder(m.gl_order))
    except DomainError as err:
        raise MisconfigurationException(f"Invalid model section: {err}")


def build_grid(cfg: RunConfig) -> UniformGrid:
    try:
        return UniformGrid(cfg.grid.a, cfg.grid.b, cfg.grid.n_points)
    except DomainError as err:
        raise MisconfigurationException(f"Invalid grid section: {err}")


def build_ansatz(cfg: RunConfig, trace: Optional[BoundaryTrace] = None) -> AnsatzSpec:
    """Architecture of the run; ``trace`` supplies time-dependent Dirichlet data, homogeneous otherwise."""
    a = cfg.ansatz
    in_dim = 1 if a.feature_map is FeatureMap.IDENTITY else 2
    widths = tuple(a.widths) if a.depth is None else (in_dim,) + (a.width,) * a.depth + (1,)
    bc = BoundaryWrapper(kind=a.bc, a=cfg.grid.a, b=cfg.grid.b)
    if trace is not None and a.bc is BoundaryKind.DIRICHLET:
        bc = BoundaryWrapper(a.bc, cfg.grid.a, cfg.grid.b, trace.g_a, trace.g_b, trace.dg_a, trace.dg_b)
    return AnsatzSpec(layer_widths=widths, bc=bc, feature_map=a.feature_map, period=a.period, seed=a.seed)


def build_optimizer(cfg: RunConfig) -> OptimizerConfig:
    return dataclasses.replace(cfg.fit)


def build_projection(cfg: RunConfig) -> ProjectionConfig:
    p = cfg.projection
    return ProjectionConfig(p.lam, p.relative_lambda, p.solver, p.weighting, p.svd_limit)


def build_stepper(cfg: RunConfig, scheme: Optional[Scheme] = None) -> StepperConfig:
    s = cfg.stepper
    return StepperConfig(
        scheme=s.scheme if scheme is None else scheme,
        dt=s.dt,
        t_end=s.t_end,
        abs_tol=s.abs_tol,
        rel_tol=s.rel_tol,
        dt_min=s.dt_min,
        dt_max=s.dt_max,
        safety=s.safety,
        record_stages=s.record_stages,
    )


def build_oracle_config(cfg: RunConfig) -> HopfColeConfig:
    model = build_model(cfg)
    assert isinstance(model, FbennConfig)
    try:
        return HopfColeConfig(
            beta=model.beta,
            epsilon=model.epsilon,
            a=cfg.grid.a,
            b=cfg.grid.b,
            fine_n=cfg.oracle.fine_n,
            quad_n=cfg.oracle.quad_n,
            y_extent=cfg.oracle.y_extent,
            t_max=max([cfg.stepper.t_end] + list(cfg.output.snapshot_times)),
        )
    except DomainError as err:
        raise MisconfigurationException(f"Invalid oracle settings: {err}")

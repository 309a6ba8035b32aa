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
"""
Fractional STNP
===============

Sequential-in-time nonlinear parametrization solvers for fractional Burgers equations

"""
from fractional_stnp.__about__ import *  # noqa: F401, F403
from fractional_stnp.ansatz import AnsatzSpec, BoundaryKind, BoundaryWrapper, FeatureMap, fit_initial, OptimizerConfig
from fractional_stnp.exceptions import DomainError, NumericalError, ShapeError, StepFailure, STNPError
from fractional_stnp.fracops import SchemeOrder, UniformGrid
from fractional_stnp.models import FbeflConfig, FbennConfig
from fractional_stnp.projection import ProjectionConfig, ProjectionSolver, Weighting
from fractional_stnp.stnp import make_qdot, run, RunReport, StnpProblem
from fractional_stnp.timestepping import Scheme, StepperConfig

__all__ = [
    "AnsatzSpec",
    "BoundaryKind",
    "BoundaryWrapper",
    "DomainError",
    "FbeflConfig",
    "FbennConfig",
    "FeatureMap",
    "NumericalError",
    "OptimizerConfig",
    "ProjectionConfig",
    "ProjectionSolver",
    "RunReport",
    "Scheme",
    "SchemeOrder",
    "ShapeError",
    "StepFailure",
    "StepperConfig",
    "STNPError",
    "StnpProblem",
    "UniformGrid",
    "Weighting",
    "fit_initial",
    "make_qdot",
    "run",
]

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
Fractional STNP Exceptions
^^^^^^^^^^^^^^^^^^^^^^^^^^

Error types raised by the numerical components. Configuration problems are reported with
:class:`~pytorch_lightning.utilities.exceptions.MisconfigurationException` instead.

"""
from typing import Any, List, Optional


class STNPError(Exception):
    """Base class of all numerical errors raised by this package.

    Errors raised while the parameter dynamics are evaluated carry the time ``t`` and the Runge-Kutta ``stage`` at
    which they surfaced.
    """

    t: Optional[float] = None
    stage: Optional[int] = None

    def annotate(self, t: float, stage: int) -> "STNPError":
        if self.t is None:
            self.t, self.stage = t, stage
        return self

    def __str__(self) -> str:
        message = super().__str__()
        return message if self.t is None else f"{message} [t={self.t:.6g}, stage {self.stage}]"


class DomainError(STNPError, ValueError):
    """An argument lies outside the domain of the requested operator."""


class ShapeError(STNPError, ValueError):
    """Grid values or matrices do not have the expected shape."""


class NumericalError(STNPError, ArithmeticError):
    """A computation produced non-finite values or broke down.

    Args:
        message: Description of the failure.
        q_last: The last finite parameter vector, if one is available.
        trajectory: Diagnostics collected before the failure, if any.

    A failing run also sets ``t_last``, the time of ``q_last``, and ``snapshots``, the ``(t, q)`` pairs recorded
    before the failure.
    """

    def __init__(self, message: str, q_last: Optional[Any] = None, trajectory: Optional[List[Any]] = None) -> None:
        super().__init__(message)
        self.q_last = q_last
        self.trajectory = trajectory if trajectory is not None else []
        self.t_last: Optional[float] = None
        self.snapshots: List[Any] = []


class StepFailure(NumericalError):
    """The adaptive step-size controller could not produce an acceptable step."""

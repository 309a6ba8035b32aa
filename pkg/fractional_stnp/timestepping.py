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
Time Stepping
^^^^^^^^^^^^^

Fixed-step SSP-RK3 and adaptive Dormand-Prince 5(4) integration of the parameter dynamics
:math:`\dot{q} = \gamma(q, t)`.

"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Tuple

import torch
from pytorch_lightning.utilities.exceptions import MisconfigurationException
from pytorch_lightning.utilities.rank_zero import rank_zero_debug

from fractional_stnp.exceptions import NumericalError, StepFailure

log = logging.getLogger(__name__)

QdotFn = Callable[[torch.Tensor, float], torch.Tensor]


class Scheme(Enum):
    SSP_RK3 = "ssp_rk3"
    RK45 = "rk45"


@dataclass(frozen=True)
class StepperConfig:
    """Integrator settings.

    Args:
        scheme: Fixed-step SSP-RK3 or adaptive RK45.
        dt: Fixed step, or the first trial step of RK45.
        t_end: Final time.
        abs_tol: Absolute tolerance of the RK45 error estimate.
        rel_tol: Relative tolerance of the RK45 error estimate.
        dt_min: Smallest step RK45 may take.
        dt_max: Largest step RK45 may take.
        safety: Safety factor of the step-size controller.
        record_stages: Keep the residual of every stage, not only the first.
    """

    scheme: Scheme = Scheme.SSP_RK3
    dt: float = 1e-3
    t_end: float = 1.0
    abs_tol: float = 1e-6
    rel_tol: float = 1e-4
    dt_min: float = 1e-8
    dt_max: float = 0.1
    safety: float = 0.9
    record_stages: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.dt_min <= self.dt <= self.dt_max:
            raise MisconfigurationException(
                f"Step sizes must satisfy 0 < dt_min <= dt <= dt_max, got {self.dt_min}, {self.dt}, {self.dt_max}."
            )
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise MisconfigurationException("RK45 tolerances must be positive.")
        if not 0 < self.safety < 1:
            raise MisconfigurationException(f"The controller safety factor must lie in (0, 1), got {self.safety}.")


@dataclass
class StepDiagnostics:
    """Record of one accepted step; quantities not computed by the caller stay ``nan``."""

    t: float
    dt: float
    accepted: bool = True
    delta: float = math.nan
    energy: float = math.nan
    sigma_min: float = math.nan
    sigma_max: float = math.nan
    contraction: float = math.nan
    trunc_proxy: float = math.nan
    m_bound: float = math.nan
    budget: float = math.nan
    budget_holds: bool = True
    contracts_hold: bool = True
    error_estimate: float = math.nan
    dt_proposed: float = math.nan
    rejected_before: int = 0
    stage_deltas: List[float] = field(default_factory=list)


class Rk45Result(NamedTuple):
    q_next: torch.Tensor
    t_next: float
    dt_next: float
    accepted: bool
    error: float
    k_last: torch.Tensor


DiagnosticsFn = Callable[[torch.Tensor, float, torch.Tensor, float, float], StepDiagnostics]
Observer = Callable[[StepDiagnostics], None]

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_A[6] + (0.0,), _B4))


def _checked(gamma: torch.Tensor, stage: int) -> torch.Tensor:
    if not torch.isfinite(gamma).all():
        raise NumericalError(f"Non-finite parameter velocity at stage {stage}.")
    return gamma


def ssp_rk3_step(q: torch.Tensor, t: float, dt: float, qdot: QdotFn) -> torch.Tensor:
    """One step of the three-stage strong-stability-preserving Runge-Kutta method in Shu-Osher form."""
    q1 = q + dt * _checked(qdot(q, t), 1)
    q2 = 0.75 * q + 0.25 * (q1 + dt * _checked(qdot(q1, t + dt), 2))
    return q / 3 + 2 / 3 * (q2 + dt * _checked(qdot(q2, t + dt / 2), 3))


def rk45_step(
    q: torch.Tensor, t: float, dt: float, qdot: QdotFn, cfg: StepperConfig, k1: Optional[torch.Tensor] = None
) -> Rk45Result:
    """Attempt one Dormand-Prince step and propose the next step size.

    Args:
        q: Current state.
        t: Current time.
        dt: Trial step.
        qdot: Vector field.
        cfg: Tolerances and step-size bounds.
        k1: Vector field at ``(q, t)`` if already known (first-same-as-last reuse or a retry after rejection).

    Returns:
        The (possibly unchanged) state and time, the proposed step, the acceptance flag, the scaled error and the
        vector field at the returned state.

    Raises:
        StepFailure: If the step is rejected while ``dt`` is already at ``cfg.dt_min``.
    """
    ks = [_checked(qdot(q, t), 1) if k1 is None else k1]
    for i in range(1, 7):
        y = q + dt * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        ks.append(_checked(qdot(y, t + _C[i] * dt), i + 1))
    # the seventh stage is evaluated at the fifth-order solution
    q5 = y
    err_vec = dt * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    scale = cfg.abs_tol + cfg.rel_tol * torch.maximum(q.abs(), q5.abs())
    err = float(torch.sqrt(torch.mean((err_vec / scale) ** 2)))
    if not math.isfinite(err):
        raise NumericalError("Non-finite RK45 error estimate.")
    factor = 5.0 if err == 0 else min(5.0, max(0.2, cfg.safety * err ** (-0.2)))
    dt_next = min(cfg.dt_max, max(cfg.dt_min, dt * factor))
    if err <= 1:
        return Rk45Result(q5, t + dt, dt_next, True, err, ks[6])
    if dt <= cfg.dt_min:
        raise StepFailure(f"RK45 step rejected at t={t:.6g} with dt={dt:.3e} at the lower bound (error {err:.3e}).")
    return Rk45Result(q, t, dt_next, False, err, ks[0])


def march(
    q0: torch.Tensor,
    t0: float,
    cfg: StepperConfig,
    qdot: QdotFn,
    observer: Optional[Observer] = None,
    diagnostics_fn: Optional[DiagnosticsFn] = None,
) -> Tuple[torch.Tensor, List[StepDiagnostics]]:
    """Integrate from ``t0`` to ``cfg.t_end``, landing exactly on ``t_end``.

    Args:
        q0: Initial state.
        t0: Initial time.
        cfg: Integrator settings.
        qdot: Vector field.
        observer: Called once per accepted step with its diagnostics.
        diagnostics_fn: Builds the diagnostics of an accepted step from ``(q_prev, t_prev, q_next, t_next, dt)``.

    Returns:
        The final state and the diagnostics of every accepted step.

    Raises:
        NumericalError: Propagated from the steppers, carrying ``trajectory`` and ``q_last``.
    """
    trajectory: List[StepDiagnostics] = []
    tol = 1e-14 * max(1.0, abs(cfg.t_end))
    q, t = q0, t0

    def accept(q_next: torch.Tensor, t_next: float, h: float, err: float, proposed: float, rejected: int) -> None:
        if diagnostics_fn is not None:
            diag = diagnostics_fn(q, t, q_next, t_next, h)
        else:
            diag = StepDiagnostics(t=t_next, dt=h)
        diag.error_estimate, diag.dt_proposed, diag.rejected_before = err, proposed, rejected
        trajectory.append(diag)
        if observer is not None:
            observer(diag)

    try:
        if cfg.scheme is Scheme.SSP_RK3:
            n_steps = max(0, math.ceil((cfg.t_end - t0) / cfg.dt - 1e-9)) if cfg.t_end - t0 > tol else 0
            for k in range(n_steps):
                t_next = cfg.t_end if k == n_steps - 1 else t0 + (k + 1) * cfg.dt
                h = t_next - t
                q_next = ssp_rk3_step(q, t, h, qdot)
                accept(q_next, t_next, h, math.nan, cfg.dt, 0)
                q, t = q_next, t_next
        else:
            h, k1, rejected = cfg.dt, None, 0
            while cfg.t_end - t > tol:
                landing = h >= cfg.t_end - t - tol
                h = cfg.t_end - t if landing else h
                res = rk45_step(q, t, h, qdot, cfg, k1)
                if res.accepted:
                    t_next = cfg.t_end if landing else res.t_next
                    accept(res.q_next, t_next, h, res.error, res.dt_next, rejected)
                    q, t, rejected = res.q_next, t_next, 0
                    k1 = res.k_last if not landing else None
                else:
                    rank_zero_debug(f"RK45 rejected dt={h:.3e} at t={t:.6g} (error {res.error:.3e})")
                    k1, rejected = res.k_last, rejected + 1
                h = res.dt_next
    except NumericalError as err:
        err.q_last, err.t_last, err.trajectory = q, t, trajectory
        raise
    return q, trajectory

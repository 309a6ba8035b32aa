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
Sequential-in-Time Nonlinear Parametrization
^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^

Couples the ansatz, the model vector fields, the tangent-space projection and the time steppers into the projected
parameter dynamics and runs them with per-step stability diagnostics.

"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import torch
from pytorch_lightning.utilities import rank_zero_info, rank_zero_warn
from pytorch_lightning.utilities.exceptions import MisconfigurationException
from pytorch_lightning.utilities.rank_zero import rank_zero_debug

from fractional_stnp.ansatz import (
    AnsatzSpec,
    BoundaryKind,
    eval_u,
    eval_u_ux_uxx,
    fit_initial,
    OptimizerConfig,
    param_jacobian,
    save_params,
)
from fractional_stnp.exceptions import NumericalError, STNPError
from fractional_stnp.fracops import DTYPE, laplacian_matrix, UniformGrid
from fractional_stnp.models import FbeflConfig, ModelConfig, rhs
from fractional_stnp.projection import ProjectionConfig, ProjectionOutcome, solve_projection, Weighting, weighted_norm
from fractional_stnp.reference import truncation_proxy
from fractional_stnp.timestepping import march, Observer, StepDiagnostics, StepperConfig

log = logging.getLogger(__name__)

InitialCondition = Callable[[torch.Tensor], torch.Tensor]
ProjectedField = Callable[[torch.Tensor, float], Tuple[torch.Tensor, ProjectionOutcome]]
Snapshot = Tuple[float, torch.Tensor]

BUDGET_TOL = 1e-8


@dataclass
class StnpProblem:
    """Everything one run needs.

    Time-dependent boundary data travel inside ``ansatz.bc``; a Dirichlet wrapper must span the collocation grid.

    Args:
        model: FBEFL or FBENN configuration.
        ansatz: Network architecture and boundary wrapper.
        grid: Uniform collocation grid.
        projection: Regularized least-squares settings.
        stepper: Time integrator settings.
        fit: Adam settings of the initial-condition fit.
        proxy_every: Recompute the truncation-error proxy every this many steps; ``0`` disables it.
        snapshot_times: Times at which the parameters are returned; the final time is always included.
        checkpoint_every: Write the parameters every this many accepted steps; ``0`` disables checkpoints.
        checkpoint_dir: Destination of the parameter checkpoints.
    """

    model: ModelConfig
    ansatz: AnsatzSpec
    grid: UniformGrid
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    stepper: StepperConfig = field(default_factory=StepperConfig)
    fit: OptimizerConfig = field(default_factory=OptimizerConfig)
    proxy_every: int = 1
    snapshot_times: Tuple[float, ...] = ()
    checkpoint_every: int = 0
    checkpoint_dir: Optional[Union[str, Path]] = None

    def __post_init__(self) -> None:
        bc = self.ansatz.bc
        if bc.kind is BoundaryKind.DIRICHLET and not (
            math.isclose(bc.a, self.grid.a, abs_tol=1e-12) and math.isclose(bc.b, self.grid.b, abs_tol=1e-12)
        ):
            raise MisconfigurationException(
                f"The Dirichlet wrapper spans [{bc.a}, {bc.b}] but the collocation grid spans "
                f"[{self.grid.a}, {self.grid.b}]."
            )
        if self.proxy_every < 0 or self.checkpoint_every < 0:
            raise MisconfigurationException("proxy_every and checkpoint_every must be nonnegative.")
        if self.checkpoint_every > 0 and self.checkpoint_dir is None:
            raise MisconfigurationException("checkpoint_every requires a checkpoint_dir.")

    @property
    def rows(self) -> slice:
        """Collocation rows entering the least-squares problem; boundary values are exact under a Dirichlet
        wrapper."""
        return slice(1, -1) if self.ansatz.bc.kind is BoundaryKind.DIRICHLET else slice(None)

    @property
    def weights(self) -> torch.Tensor:
        """Norm weights on the full grid."""
        if self.projection.weighting is Weighting.UNIT:
            return torch.ones(self.grid.n_points, dtype=DTYPE)
        return self.grid.weights


def make_qdot(problem: StnpProblem) -> ProjectedField:
    """Build ``(q, t) -> (gamma, outcome)``: the parameter velocity whose tangent image best matches the vector field
    at the collocation points."""
    grid, spec, rows = problem.grid, problem.ansatz, problem.rows
    weights = problem.weights[rows]

    def qdot(q: torch.Tensor, t: float) -> Tuple[torch.Tensor, ProjectionOutcome]:
        u, ux, uxx = eval_u_ux_uxx(q, spec, grid.points, t)
        f = rhs(problem.model, u, ux, uxx, t, grid)
        if spec.bc.time_dependent:
            f = f - spec.bc.lift_dt(grid.points, t)
        jac = param_jacobian(q, spec, grid.points, t)
        outcome = solve_projection(jac[rows], f[rows], problem.projection, weights)
        return outcome.gamma, outcome

    return qdot


class StageRecorder:
    """Vector field handed to the steppers that keeps the projection outcome of every stage.

    Outcomes accumulate until :meth:`reset` after an accepted step, which keeps only a stage evaluated at the new
    step's start (the first-same-as-last stage of RK45).
    """

    def __init__(self, problem: StnpProblem) -> None:
        self._qdot = make_qdot(problem)
        self.records: List[Tuple[float, ProjectionOutcome]] = []
        self.stage = 0

    def __call__(self, q: torch.Tensor, t: float) -> torch.Tensor:
        self.stage += 1
        try:
            gamma, outcome = self._qdot(q, t)
        except STNPError as err:
            raise err.annotate(t, self.stage)
        self.records.append((t, outcome))
        return gamma

    @staticmethod
    def _same_time(a: float, b: float) -> bool:
        return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-14)

    def first_stage(self, t: float) -> ProjectionOutcome:
        for t_rec, outcome in self.records:
            if self._same_time(t_rec, t):
                return outcome
        raise NumericalError(f"No stage was evaluated at the step start t={t:.6g}.")

    def reset(self, t_next: float) -> None:
        last = self.records[-1:] if self.records and self._same_time(self.records[-1][0], t_next) else []
        self.records, self.stage = last, len(last)


@dataclass
class RunReport:
    """Diagnostics of one run and the terms of the stability and error budgets.

    ``budget`` is the cumulative sum of ``dt * (delta + trunc_proxy)`` over the accepted steps; the energy check
    compares ``E(t_n)`` with ``energy0 + budget`` at every step.
    """

    steps: List[StepDiagnostics] = field(default_factory=list)
    fit_mse: float = math.nan
    e0: float = math.nan
    energy0: float = math.nan
    lambda_star: float = math.nan
    budget: float = 0.0
    delta_integral: float = 0.0
    proxy_integral: float = 0.0

    @property
    def accepted_steps(self) -> int:
        return len(self.steps)

    @property
    def budget_holds(self) -> bool:
        return all(s.budget_holds for s in self.steps)

    @property
    def contracts_hold(self) -> bool:
        return all(s.contracts_hold for s in self.steps)


def estimate_lambda_star(model: ModelConfig, grid: UniformGrid) -> float:
    """Smallest eigenvalue of the symmetrized discrete fractional Laplacian restricted to interior nodes.

    Only meaningful for FBEFL; ``nan`` otherwise.
    """
    if not isinstance(model, FbeflConfig):
        return math.nan
    lap = laplacian_matrix(model.alpha, grid, model.gl_order)[1:-1, 1:-1]
    return float(torch.linalg.eigvalsh(0.5 * (lap + lap.T))[0])


class _Diagnostics:
    """Per-step bookkeeping passed to :func:`~fractional_stnp.timestepping.march` as its ``diagnostics_fn``."""

    def __init__(self, problem: StnpProblem, recorder: StageRecorder, report: RunReport) -> None:
        self.problem, self.recorder, self.report = problem, recorder, report
        self.step = 0
        self.proxy = 0.0
        self.warned = False

    def _proxy(self, q: torch.Tensor, t: float) -> float:
        every = self.problem.proxy_every
        if every == 0:
            return 0.0
        if self.step % every == 0:
            spec, problem = self.problem.ansatz, self.problem
            self.proxy = truncation_proxy(
                lambda pts: eval_u_ux_uxx(q, spec, pts, t), t, problem.model, problem.grid, problem.weights
            )
        return self.proxy

    def __call__(
        self, q_prev: torch.Tensor, t_prev: float, q_next: torch.Tensor, t_next: float, dt: float
    ) -> StepDiagnostics:
        problem, report = self.problem, self.report
        outcome = self.recorder.first_stage(t_prev)
        proxy = self._proxy(q_prev, t_prev)
        self.step += 1
        report.delta_integral += dt * outcome.delta
        report.proxy_integral += dt * proxy
        report.budget = report.delta_integral + report.proxy_integral

        u, ux, _ = eval_u_ux_uxx(q_next, problem.ansatz, problem.grid.points, t_next)
        energy = weighted_norm(u, problem.weights)
        holds = energy <= report.energy0 + report.budget + BUDGET_TOL
        if not holds and not self.warned:
            rank_zero_warn(
                f"Energy {energy:.6e} at t={t_next:.6g} exceeds the stability budget "
                f"{report.energy0 + report.budget:.6e}."
            )
            self.warned = True
        stage_deltas = [o.delta for _, o in self.recorder.records] if problem.stepper.record_stages else []
        diag = StepDiagnostics(
            t=t_next,
            dt=dt,
            delta=outcome.delta,
            energy=energy,
            sigma_min=outcome.sigma_min,
            sigma_max=outcome.sigma_max,
            contraction=outcome.contraction,
            trunc_proxy=proxy,
            m_bound=max(float(u.abs().max()), float(ux.abs().max())),
            budget=report.budget,
            budget_holds=holds,
            contracts_hold=outcome.contracts_hold(),
            stage_deltas=stage_deltas,
        )
        self.recorder.reset(t_next)
        if problem.checkpoint_every and self.step % problem.checkpoint_every == 0:
            save_params(
                Path(problem.checkpoint_dir) / f"q_{self.step:06d}.csv",  # type: ignore[arg-type]
                q_next,
                problem.ansatz,
                t=t_next,
                step=self.step,
            )
        rank_zero_debug(f"step {self.step}: t={t_next:.6g} dt={dt:.3e} delta={outcome.delta:.3e} E={energy:.6e}")
        return diag


def segment_ends(t_end: float, snapshot_times: Sequence[float]) -> List[float]:
    """Times at which a run stops to record a snapshot, ending with ``t_end``."""
    inner = {float(t) for t in snapshot_times if 0 < t < t_end}
    return sorted(inner) + ([t_end] if t_end > 0 else [])


def run(
    problem: StnpProblem,
    u0: InitialCondition,
    q_init: Optional[torch.Tensor] = None,
    observer: Optional[Observer] = None,
) -> Tuple[List[Snapshot], RunReport]:
    """Fit the initial condition and march the projected dynamics to ``problem.stepper.t_end``.

    Args:
        problem: Run definition.
        u0: Initial condition, evaluated at the fit samples and on the collocation grid.
        q_init: Starting parameters of the fit; Xavier initialization when omitted.
        observer: Called once per accepted step.

    Returns:
        ``(t, q)`` at time zero, at every snapshot time inside ``(0, t_end)`` and at ``t_end``, and the run report.

    Raises:
        NumericalError: With ``trajectory`` holding the diagnostics of all accepted steps before the failure and
            ``snapshots`` the snapshots completed before it.
    """
    grid, spec, cfg = problem.grid, problem.ansatz, problem.stepper
    xs = torch.linspace(grid.a, grid.b, problem.fit.n_samples, dtype=DTYPE)
    q0, fit_mse = fit_initial(spec, (xs, u0(xs)), problem.fit, q_init)

    report = RunReport(fit_mse=fit_mse, lambda_star=estimate_lambda_star(problem.model, grid))
    u_fit = eval_u(q0, spec, grid.points, 0.0)
    report.e0 = weighted_norm(u_fit - u0(grid.points), problem.weights)
    report.energy0 = weighted_norm(u_fit, problem.weights)

    recorder = StageRecorder(problem)
    diagnostics = _Diagnostics(problem, recorder, report)
    snapshots: List[Snapshot] = [(0.0, q0)]
    q, t, dt = q0, 0.0, cfg.dt
    for t_seg in segment_ends(cfg.t_end, problem.snapshot_times):
        seg_cfg = dataclasses.replace(cfg, t_end=t_seg, dt=min(cfg.dt_max, max(cfg.dt_min, dt)))
        try:
            q, steps = march(q, t, seg_cfg, recorder, observer=observer, diagnostics_fn=diagnostics)
        except NumericalError as err:
            err.trajectory = report.steps + err.trajectory
            err.snapshots = list(snapshots)
            raise
        report.steps.extend(steps)
        t = t_seg
        if steps and math.isfinite(steps[-1].dt_proposed):
            dt = steps[-1].dt_proposed
        snapshots.append((t, q))

    rank_zero_info(
        f"STNP run finished: {report.accepted_steps} accepted steps to t={t:.6g}, budget {report.budget:.3e}, "
        f"initial misfit {report.e0:.3e}."
    )
    return snapshots, report

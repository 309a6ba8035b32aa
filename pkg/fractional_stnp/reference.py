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
Reference Solutions
^^^^^^^^^^^^^^^^^^^

Ground truth and baselines: the fractional Hopf-Cole solution of FBENN, an independent classical Cole-Hopf solution
of the viscous Burgers equation, central-difference and Godunov-upwind grid solvers of FBEFL, and the Richardson
proxy of the spatial truncation error.

"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pytorch_lightning.utilities import rank_zero_warn
from scipy.interpolate import CubicSpline

from fractional_stnp.exceptions import DomainError, NumericalError
from fractional_stnp.fracops import caputo_apply, DTYPE, laplacian_matrix, rl_integral_apply, UniformGrid
from fractional_stnp.models import FbeflConfig, ModelConfig, rhs
from fractional_stnp.projection import weighted_norm
from fractional_stnp.timestepping import ssp_rk3_step

log = logging.getLogger(__name__)

InitialCondition = Callable[[torch.Tensor], torch.Tensor]
Sampler = Callable[[torch.Tensor], Tuple[torch.Tensor, torch.Tensor, torch.Tensor]]

BLOWUP_THRESHOLD = 1e3


@dataclass(frozen=True)
class HopfColeConfig:
    """Resolution of the fractional Hopf-Cole oracle.

    Args:
        beta: Caputo order in (0, 1].
        epsilon: Viscosity.
        a: Left endpoint (lower terminal of the Caputo and RL operators).
        b: Right endpoint.
        fine_n: Nodes of the fine oracle grid on ``[a, b]``; should be at least four times the solver grid.
        quad_n: Nodes of the heat-kernel quadrature.
        y_extent: Half-width of the convolution window; ``6 sqrt(4 epsilon t_max)`` when omitted.
        t_max: Largest time the window has to cover.
    """

    beta: float = 0.8
    epsilon: float = 1 / (150 * math.pi)
    a: float = -1.0
    b: float = 1.0
    fine_n: int = 2001
    quad_n: int = 2001
    y_extent: Optional[float] = None
    t_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.beta <= 1:
            raise DomainError(f"The Hopf-Cole oracle requires beta in (0, 1], got {self.beta}.")
        if not self.epsilon > 0:
            raise DomainError(f"The Hopf-Cole oracle requires epsilon > 0, got {self.epsilon}.")

    @property
    def window(self) -> float:
        return self.y_extent if self.y_extent is not None else 6 * math.sqrt(4 * self.epsilon * self.t_max)

    def describe(self) -> Dict[str, Any]:
        return {
            "beta": self.beta,
            "epsilon": self.epsilon,
            "domain": [self.a, self.b],
            "fine_n": self.fine_n,
            "quad_n": self.quad_n,
            "y_extent": self.window,
        }


def _trapezoid_log_weights(n: int, spacing: float) -> torch.Tensor:
    w = torch.full((n,), spacing, dtype=DTYPE)
    w[0] = w[-1] = spacing / 2
    return torch.log(w)


def _interpolate(points: torch.Tensor, values: torch.Tensor, xs: torch.Tensor) -> torch.Tensor:
    spline = CubicSpline(points.numpy(), values.numpy())
    return torch.as_tensor(spline(xs.numpy()), dtype=DTYPE)


class HopfColeOracle:
    """Exact FBENN solution ``u = -2 epsilon D^beta log(phi)`` where ``phi`` solves the heat equation with data
    ``exp(-I^beta u0 / (2 epsilon))``.

    The fractional integral of ``u0`` does not depend on time and is computed once per oracle.
    """

    def __init__(self, u0: InitialCondition, cfg: HopfColeConfig) -> None:
        self.cfg = cfg
        self.fine = UniformGrid(cfg.a, cfg.b, cfg.fine_n)
        h = self.fine.h
        n_ext = cfg.fine_n + math.ceil(cfg.window / h) + 1
        self.extended = UniformGrid(cfg.a, cfg.a + (n_ext - 1) * h, n_ext)
        y = self.extended.points
        u_ext = torch.where(y <= cfg.b, u0(y), torch.zeros_like(y))
        integral = rl_integral_apply(u_ext, cfg.beta, self.extended)
        self._integral = CubicSpline(y.numpy(), integral.numpy())
        self._offsets = torch.linspace(-cfg.window, cfg.window, cfg.quad_n, dtype=DTYPE)
        self._log_w = _trapezoid_log_weights(cfg.quad_n, 2 * cfg.window / (cfg.quad_n - 1))

    def log_phi(self, t: float) -> torch.Tensor:
        """``log(phi)`` on the fine grid, evaluated with a log-sum-exp over the quadrature nodes."""
        eps = self.cfg.epsilon
        y = self.fine.points[:, None] + self._offsets[None, :]
        integral = torch.as_tensor(self._integral(y.clamp(min=self.cfg.a).numpy()), dtype=DTYPE)
        integral = torch.where(y < self.cfg.a, torch.zeros_like(integral), integral)
        exponent = -self._offsets**2 / (4 * eps * t) - integral / (2 * eps) + self._log_w
        log_phi = torch.logsumexp(exponent, dim=1) - 0.5 * math.log(4 * math.pi * eps * t)
        if not torch.isfinite(log_phi).all():
            raise NumericalError(f"Hopf-Cole quadrature broke down at t={t:.6g} (phi is not positive).")
        return log_phi

    def profile(self, t: float) -> torch.Tensor:
        """The solution on the fine oracle grid."""
        if not t > 0:
            raise DomainError(f"The Hopf-Cole oracle requires t > 0, got {t}.")
        psi = self.log_phi(t)
        if self.cfg.beta == 1:
            deriv = torch.gradient(psi, spacing=self.fine.h, edge_order=2)[0]
        else:
            deriv = caputo_apply(psi, self.cfg.beta, self.fine)
        return -2 * self.cfg.epsilon * deriv

    def __call__(self, xs: torch.Tensor, t: float) -> torch.Tensor:
        return _interpolate(self.fine.points, self.profile(t), torch.as_tensor(xs, dtype=DTYPE))


def fbenn_exact(xs: torch.Tensor, t: float, u0: InitialCondition, cfg: HopfColeConfig) -> torch.Tensor:
    """Evaluate the fractional Hopf-Cole solution at ``xs`` and time ``t > 0``."""
    return HopfColeOracle(u0, cfg)(xs, t)


def classical_cole_hopf(
    xs: torch.Tensor,
    t: float,
    u0: InitialCondition,
    epsilon: float,
    a: float,
    b: float,
    n: int = 2001,
    y_extent: Optional[float] = None,
) -> torch.Tensor:
    """Viscous Burgers solution by the classical Cole-Hopf transform.

    The antiderivative of ``u0`` is a running trapezoid sum, the heat-kernel convolution runs over the grid nodes
    themselves and the log-derivative is a finite difference.
    """
    if not t > 0:
        raise DomainError(f"Cole-Hopf requires t > 0, got {t}.")
    window = y_extent if y_extent is not None else 6 * math.sqrt(4 * epsilon * t)
    h = (b - a) / (n - 1)
    pad = math.ceil(window / h) + 1
    y = a + h * torch.arange(-pad, n + pad, dtype=DTYPE)
    u_ext = torch.where((y >= a) & (y <= b), u0(y), torch.zeros_like(y))
    antiderivative = torch.cumulative_trapezoid(u_ext, dx=h)
    antiderivative = torch.cat([torch.zeros(1, dtype=DTYPE), antiderivative])
    antiderivative = antiderivative - antiderivative[pad]
    x = y[pad : pad + n]
    exponent = -((x[:, None] - y[None, :]) ** 2) / (4 * epsilon * t) - antiderivative[None, :] / (2 * epsilon)
    psi = torch.logsumexp(exponent + _trapezoid_log_weights(y.numel(), h), dim=1)
    u = -2 * epsilon * torch.gradient(psi, spacing=h, edge_order=2)[0]
    return _interpolate(x, u, torch.as_tensor(xs, dtype=DTYPE))


class BoundaryTrace(NamedTuple):
    g_a: Callable[[float], float]
    g_b: Callable[[float], float]
    dg_a: Callable[[float], float]
    dg_b: Callable[[float], float]


def boundary_samples(
    oracle: HopfColeOracle, u0: InitialCondition, t_end: float, n_samples: int = 101
) -> Tuple[np.ndarray, np.ndarray]:
    """Oracle boundary values ``(times, table)`` with ``table[k] = (u(a, t_k), u(b, t_k))``; ``t_0 = 0`` uses ``u0``."""
    cfg = oracle.cfg
    ends = torch.tensor([cfg.a, cfg.b], dtype=DTYPE)
    times = np.linspace(0.0, t_end, n_samples)
    values = [u0(ends)] + [oracle(ends, float(t)) for t in times[1:]]
    return times, torch.stack(values).numpy()


def spline_trace(times: np.ndarray, table: np.ndarray) -> BoundaryTrace:
    """Cubic splines in time through sampled boundary values, with their derivatives."""
    left, right = CubicSpline(times, table[:, 0]), CubicSpline(times, table[:, 1])
    dleft, dright = left.derivative(), right.derivative()
    return BoundaryTrace(
        lambda t: float(left(t)), lambda t: float(right(t)), lambda t: float(dleft(t)), lambda t: float(dright(t))
    )


def boundary_trace(oracle: HopfColeOracle, u0: InitialCondition, t_end: float, n_samples: int = 101) -> BoundaryTrace:
    """Boundary data ``g_a(t), g_b(t)`` and their time derivatives sampled from the oracle."""
    return spline_trace(*boundary_samples(oracle, u0, t_end, n_samples))


@dataclass
class Trajectory:
    grid: UniformGrid
    times: List[float] = field(default_factory=list)
    states: List[torch.Tensor] = field(default_factory=list)
    blew_up: bool = False
    blowup_time: Optional[float] = None

    def at(self, t: float) -> torch.Tensor:
        """The recorded state closest to ``t``."""
        idx = min(range(len(self.times)), key=lambda i: abs(self.times[i] - t))
        return self.states[idx]


def godunov_flux(ul: torch.Tensor, ur: torch.Tensor) -> torch.Tensor:
    """Exact Riemann flux of ``u^2 / 2`` at interfaces with states ``ul`` (left) and ``ur`` (right)."""
    fl, fr = 0.5 * ul * ul, 0.5 * ur * ur
    rarefaction = torch.where((ul < 0) & (ur > 0), torch.zeros_like(fl), torch.minimum(fl, fr))
    return torch.where(ul > ur, torch.maximum(fl, fr), rarefaction)


def _central_divergence(u: torch.Tensor, h: float) -> torch.Tensor:
    flux = torch.nn.functional.pad(0.5 * u * u, (1, 1))
    return (flux[2:] - flux[:-2]) / (2 * h)


def _upwind_divergence(u: torch.Tensor, h: float) -> torch.Tensor:
    interface = godunov_flux(u[:-1], u[1:])
    div = torch.zeros_like(u)
    div[1:-1] = (interface[1:] - interface[:-1]) / h
    return div


def _grid_initial(grid: UniformGrid, u0: Union[InitialCondition, torch.Tensor]) -> torch.Tensor:
    u = (u0(grid.points) if callable(u0) else torch.as_tensor(u0, dtype=DTYPE)).clone()
    grid.check_values(u)
    u[0] = u[-1] = 0.0
    return u


def _solve_grid(
    grid: UniformGrid,
    cfg: FbeflConfig,
    u0: Union[InitialCondition, torch.Tensor],
    dt: float,
    t_end: float,
    record_times: Optional[Sequence[float]],
    divergence: Callable[[torch.Tensor, float], torch.Tensor],
    cfl: bool,
) -> Trajectory:
    u = _grid_initial(grid, u0)
    lap = laplacian_matrix(cfg.alpha, grid, cfg.gl_order)
    dt_diffusion = 1.25 / (cfg.epsilon * float(lap.abs().sum(dim=1).max()))
    pending = sorted({float(t) for t in (record_times or ()) if 0 < t <= t_end} | {t_end})
    traj = Trajectory(grid, [0.0], [u.clone()])
    warned = False

    def vector_field(v: torch.Tensor, t: float) -> torch.Tensor:
        f = -divergence(v, grid.h) - cfg.epsilon * (lap @ v)
        if cfg.forcing is not None:
            f = f + cfg.forcing(grid.points, t)
        f[0] = f[-1] = 0.0
        return f

    n_steps = math.ceil(t_end / dt - 1e-9) if t_end > 0 else 0
    t = 0.0
    for k in range(n_steps):
        t_next = t_end if k == n_steps - 1 else (k + 1) * dt
        h = t_next - t
        limit = dt_diffusion
        if cfl:
            u_max = float(u.abs().max())
            if u_max > 0:
                limit = min(limit, 0.4 * grid.h / u_max)
        substeps = max(1, math.ceil(h / limit))
        if cfl and substeps > 1 and not warned:
            rank_zero_warn(f"Reducing the reference step from {h:.3e} to {h / substeps:.3e} to respect stability.")
            warned = True
        try:
            for s in range(substeps):
                u = ssp_rk3_step(u, t + s * h / substeps, h / substeps, vector_field)
        except NumericalError:
            traj.blew_up, traj.blowup_time = True, t_next
            break
        t = t_next
        if float(u.abs().max()) > BLOWUP_THRESHOLD:
            traj.blew_up, traj.blowup_time = True, t
            break
        while pending and t >= pending[0] - 1e-12:
            traj.times.append(pending.pop(0))
            traj.states.append(u.clone())
    return traj


def central_diff_fbefl(
    grid: UniformGrid,
    cfg: FbeflConfig,
    u0: Union[InitialCondition, torch.Tensor],
    dt: float,
    t_end: float,
    record_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Conservative central differences for ``(u^2/2)_x``, GL fractional Laplacian and SSP-RK3 with homogeneous
    Dirichlet boundaries. Blow-up beyond ``max|u| > 1e3`` truncates the trajectory."""
    return _solve_grid(grid, cfg, u0, dt, t_end, record_times, _central_divergence, cfl=False)


def upwind_fbefl(
    grid: UniformGrid,
    cfg: FbeflConfig,
    u0: Union[InitialCondition, torch.Tensor],
    dt: float,
    t_end: float,
    record_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Godunov finite volumes for ``(u^2/2)_x``, GL fractional Laplacian and SSP-RK3, sub-stepping whenever the
    CFL bound ``dt <= 0.4 h / max|u|`` would be violated."""
    return _solve_grid(grid, cfg, u0, dt, t_end, record_times, _upwind_divergence, cfl=True)


def truncation_proxy(
    sampler: Sampler, t: float, cfg: ModelConfig, grid: UniformGrid, weights: Optional[torch.Tensor] = None
) -> float:
    """Richardson estimate of the spatial truncation error of the vector field.

    Args:
        sampler: Returns ``(u, u_x, u_xx)`` of the current state at arbitrary points.
        t: Time.
        cfg: Model whose vector field is assembled.
        grid: Coarse grid; the estimate compares against the grid with every interval halved.
        weights: Norm weights on the coarse grid; trapezoid weights when omitted.

    Returns:
        The weighted norm of the refined vector field, restricted to the coarse nodes, minus the coarse one.
    """
    fine = grid.refined()
    u, ux, uxx = sampler(fine.points)
    f_fine = rhs(cfg, u, ux, uxx, t, fine)[::2]
    f_coarse = rhs(cfg, u[::2], ux[::2], uxx[::2], t, grid)
    return weighted_norm(f_fine - f_coarse, grid.weights if weights is None else weights)


def total_variation(u: torch.Tensor) -> float:
    return float(torch.sum(torch.abs(torch.diff(u))))


def relative_l2_error(u: torch.Tensor, u_ref: torch.Tensor, weights: torch.Tensor) -> float:
    """``sqrt(sum w (u - u_ref)^2 / sum w u_ref^2)``."""
    return weighted_norm(u - u_ref, weights) / weighted_norm(u_ref, weights)


def oracle_key(meta: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]


def save_oracle(cache_dir: Union[str, Path], meta: Dict[str, Any], xs: torch.Tensor, values: torch.Tensor) -> Path:
    """Write an oracle profile keyed by the hash of ``meta`` (which should hold beta, epsilon, t and settings)."""
    path = Path(cache_dir) / f"oracle_{oracle_key(meta)}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    table = torch.stack([torch.as_tensor(xs, dtype=DTYPE), values], dim=1).numpy()
    header = json.dumps(meta, sort_keys=True) + "\nx,u"
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="# ")
    return path


def load_oracle(cache_dir: Union[str, Path], meta: Dict[str, Any]) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
    """The cached ``(xs, values)`` for ``meta``, or ``None`` when absent."""
    path = Path(cache_dir) / f"oracle_{oracle_key(meta)}.csv"
    if not path.is_file():
        return None
    table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return torch.as_tensor(table[:, 0], dtype=DTYPE), torch.as_tensor(table[:, 1], dtype=DTYPE)

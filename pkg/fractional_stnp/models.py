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
Fractional Burgers Models
^^^^^^^^^^^^^^^^^^^^^^^^^

Vector fields :math:`f^h` of the Burgers equation with fractional Laplacian diffusion (FBEFL) and of the Burgers
equation with a nonlocal Caputo flux (FBENN), assembled on uniform collocation grids.

"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import torch

from fractional_stnp.exceptions import DomainError
from fractional_stnp.fracops import caputo_apply, frac_laplacian_apply, gamma_fn, SchemeOrder, UniformGrid

log = logging.getLogger(__name__)

Forcing = Callable[[torch.Tensor, float], torch.Tensor]


@dataclass(frozen=True)
class FbeflConfig:
    """``u_t + u u_x + epsilon (-Δ)^(alpha/2) u = forcing``.

    Args:
        alpha: Fractional order in (1, 2]; ``alpha = 2`` is the classical viscous Burgers equation.
        epsilon: Diffusion rate.
        gl_order: Order of the shifted GL formulas inside the fractional Laplacian.
        forcing: Optional source term ``f(x, t)``.
    """

    alpha: float = 1.6
    epsilon: float = 0.01
    gl_order: SchemeOrder = SchemeOrder.SECOND
    forcing: Optional[Forcing] = None

    def __post_init__(self) -> None:
        if not 1 < self.alpha <= 2:
            raise DomainError(f"FBEFL requires alpha in (1, 2], got {self.alpha}.")
        if not self.epsilon > 0:
            raise DomainError(f"FBEFL requires epsilon > 0, got {self.epsilon}.")


@dataclass(frozen=True)
class FbennConfig:
    """``u_t + 1/2 D^beta[(D^(1-beta) u)^2] = epsilon u_xx`` with left Caputo derivatives.

    Args:
        beta: Order of the outer Caputo derivative in [0, 1].
        epsilon: Viscosity.
    """

    beta: float = 0.8
    epsilon: float = 1 / (150 * math.pi)

    def __post_init__(self) -> None:
        if not 0 <= self.beta <= 1:
            raise DomainError(f"FBENN requires beta in [0, 1], got {self.beta}.")
        if not self.epsilon > 0:
            raise DomainError(f"FBENN requires epsilon > 0, got {self.epsilon}.")


ModelConfig = Union[FbeflConfig, FbennConfig]


def fbefl_rhs(u: torch.Tensor, ux: torch.Tensor, t: float, cfg: FbeflConfig, grid: UniformGrid) -> torch.Tensor:
    """``-epsilon (-Δ)^(alpha/2) u - u u_x + forcing`` at the grid nodes."""
    grid.check_values(u)
    grid.check_values(ux)
    f = -cfg.epsilon * frac_laplacian_apply(u, cfg.alpha, grid, cfg.gl_order) - u * ux
    if cfg.forcing is not None:
        f = f + cfg.forcing(grid.points, t)
    return f


def fbenn_rhs(
    u: torch.Tensor, uxx: torch.Tensor, ux: torch.Tensor, t: float, cfg: FbennConfig, grid: UniformGrid
) -> torch.Tensor:
    """``epsilon u_xx - 1/2 D^beta[(D^(1-beta) u)^2]`` at the grid nodes.

    ``beta = 1`` and ``beta = 0`` use the local limits ``u u_x`` and ``1/2 u_x^2``; interior orders apply the L1
    scheme to the grid values twice.
    """
    for values in (u, uxx, ux):
        grid.check_values(values)
    if cfg.beta == 1:
        nonlinear = u * ux
    elif cfg.beta == 0:
        nonlinear = 0.5 * ux * ux
    else:
        inner = caputo_apply(u, 1 - cfg.beta, grid)
        nonlinear = 0.5 * caputo_apply(inner * inner, cfg.beta, grid)
    return cfg.epsilon * uxx - nonlinear


def rhs(
    cfg: ModelConfig, u: torch.Tensor, ux: torch.Tensor, uxx: torch.Tensor, t: float, grid: UniformGrid
) -> torch.Tensor:
    if isinstance(cfg, FbeflConfig):
        return fbefl_rhs(u, ux, t, cfg, grid)
    return fbenn_rhs(u, uxx, ux, t, cfg, grid)


def manufactured_solution(x: torch.Tensor, t: float) -> torch.Tensor:
    """``exp(-t) x^3 (1 - x)^3`` on ``[0, 1]``."""
    return math.exp(-t) * x**3 * (1 - x) ** 3


def manufactured_forcing(
    x: Union[float, torch.Tensor], t: float, alpha: float, epsilon: float
) -> Union[float, torch.Tensor]:
    """Source term for which :func:`manufactured_solution` solves FBEFL exactly on ``[0, 1]``.

    The fractional part uses the termwise RL derivatives of ``x^3 - 3x^4 + 3x^5 - x^6`` and of its mirror image.
    """
    xt = torch.as_tensor(x, dtype=torch.float64)
    y = 1 - xt
    decay = math.exp(-t)
    frac = torch.zeros_like(xt)
    for k, c in zip(range(3, 7), (1.0, -3.0, 3.0, -1.0)):
        frac = frac + c * gamma_fn(k + 1) / gamma_fn(k + 1 - alpha) * (xt ** (k - alpha) + y ** (k - alpha))
    value = (
        -decay * xt**3 * y**3
        + decay**2 * (3 - 6 * xt) * xt**5 * y**5
        + epsilon * decay / (2 * math.cos(alpha * math.pi / 2)) * frac
    )
    return value if isinstance(x, torch.Tensor) else float(value)


def manufactured_config(alpha: float, epsilon: float, gl_order: SchemeOrder = SchemeOrder.SECOND) -> FbeflConfig:
    """FBEFL configuration carrying the manufactured forcing."""

    def forcing(points: torch.Tensor, t: float) -> torch.Tensor:
        return manufactured_forcing(points, t, alpha, epsilon)  # type: ignore[return-value]

    return FbeflConfig(alpha=alpha, epsilon=epsilon, gl_order=gl_order, forcing=forcing)

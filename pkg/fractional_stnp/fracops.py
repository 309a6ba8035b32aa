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
Fractional Operators
^^^^^^^^^^^^^^^^^^^^

Weight plans and dense convolution-style application of the Caputo L1 scheme, the shifted Grünwald-Letnikov
formulas, the Riesz-form fractional Laplacian and the Riemann-Liouville fractional integral on uniform grids.

All operators act on the last dimension of their input and treat values outside ``[a, b]`` as zero.

"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache

import torch
from scipy import special

from fractional_stnp.exceptions import DomainError, ShapeError

log = logging.getLogger(__name__)

DTYPE = torch.float64


class PlanKind(Enum):
    CAPUTO_L1 = "caputo_l1"
    GL_SHIFTED1 = "gl_shifted1"
    GL_SHIFTED2 = "gl_shifted2"
    RL_INTEGRAL = "rl_integral"
    FRAC_LAPLACIAN = "frac_laplacian"


class Direction(Enum):
    LEFT = "left"
    RIGHT = "right"


class SchemeOrder(Enum):
    FIRST = 1
    SECOND = 2


@dataclass(frozen=True)
class UniformGrid:
    """Uniform collocation grid on ``[a, b]`` with trapezoid quadrature weights.

    Args:
        a: Left endpoint.
        b: Right endpoint.
        n_points: Number of grid nodes (including both endpoints).
    """

    a: float
    b: float
    n_points: int

    def __post_init__(self) -> None:
        if not self.b > self.a:
            raise DomainError(f"Grid requires b > a, got a={self.a}, b={self.b}.")
        if self.n_points < 2:
            raise DomainError(f"Grid requires at least two nodes, got {self.n_points}.")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n_points - 1)

    @cached_property
    def points(self) -> torch.Tensor:
        x = self.a + self.h * torch.arange(self.n_points, dtype=DTYPE)
        x[-1] = self.b
        return x

    @cached_property
    def weights(self) -> torch.Tensor:
        w = torch.full((self.n_points,), self.h, dtype=DTYPE)
        w[0] = w[-1] = self.h / 2
        return w

    def refined(self) -> "UniformGrid":
        """The grid with every interval halved; its even-indexed nodes coincide with this grid."""
        return UniformGrid(self.a, self.b, 2 * self.n_points - 1)

    def check_values(self, u: torch.Tensor) -> None:
        if u.ndim == 0 or u.shape[-1] != self.n_points:
            raise ShapeError(f"Expected {self.n_points} grid values, got shape {tuple(u.shape)}.")


def gamma_fn(x: float) -> float:
    """The Gamma function on the positive real axis.

    >>> gamma_fn(4.0)
    6.0
    >>> round(gamma_fn(0.5) ** 2, 12) == round(math.pi, 12)
    True
    """
    if not x > 0:
        raise DomainError(f"gamma_fn is only defined here for x > 0, got {x}.")
    return float(special.gamma(x))


def l1_weights(alpha: float, n: int) -> torch.Tensor:
    """L1 weights ``a_l = (l+1)^(1-alpha) - l^(1-alpha)`` for ``l = 0..n-1``.

    >>> l1_weights(0.5, 2).tolist()  # doctest: +ELLIPSIS
    [1.0, 0.41421356...]
    """
    if not 0 < alpha < 1:
        raise DomainError(f"L1 weights require alpha in (0, 1), got {alpha}.")
    if n < 1:
        raise DomainError(f"L1 weights require n >= 1, got {n}.")
    ell = torch.arange(n, dtype=DTYPE)
    return (ell + 1) ** (1 - alpha) - ell ** (1 - alpha)


def gl_weights(alpha: float, K: int) -> torch.Tensor:
    """Grünwald-Letnikov weights ``g_0..g_K`` from ``g_k = (1 - (alpha + 1) / k) g_{k-1}``."""
    if not 0 < alpha <= 2:
        raise DomainError(f"GL weights require alpha in (0, 2], got {alpha}.")
    if K < 0:
        raise DomainError(f"GL weights require K >= 0, got {K}.")
    k = torch.arange(1, K + 1, dtype=DTYPE)
    factors = torch.cat([torch.ones(1, dtype=DTYPE), 1 - (alpha + 1) / k])
    return torch.cumprod(factors, dim=0)


def _toeplitz(coeffs: torch.Tensor, n: int, offset: int = 0) -> torch.Tensor:
    """Dense ``n x n`` matrix with ``M[i, j] = coeffs[i - j + offset]`` where that index is valid, else 0."""
    idx = torch.arange(n)[:, None] - torch.arange(n)[None, :] + offset
    valid = (idx >= 0) & (idx < coeffs.numel())
    return torch.where(valid, coeffs[idx.clamp(0, coeffs.numel() - 1)], torch.zeros((), dtype=DTYPE))


@dataclass(frozen=True, eq=False)
class FracOpPlan:
    """Precomputed weights and scheme metadata for one nonlocal operator on a fixed grid size.

    Plans are immutable and shareable across threads; the dense operator is materialized on first use.
    """

    kind: PlanKind
    order: float
    h: float
    n_points: int
    weights: torch.Tensor
    shift_p: int = 1
    shift_q: int = 0
    lambda1: float = 1.0
    lambda2: float = 0.0
    direction: Direction = Direction.LEFT

    @cached_property
    def matrix(self) -> torch.Tensor:
        """The dense operator acting on grid values (column vectors)."""
        n = self.n_points
        if self.kind is PlanKind.CAPUTO_L1:
            diff = torch.eye(n, dtype=DTYPE) - torch.diag(torch.ones(n - 1, dtype=DTYPE), -1)
            diff[0, 0] = 0.0
            return self._caputo_core @ diff
        if self.kind is PlanKind.RL_INTEGRAL:
            return self._rl_matrix()
        if self.kind is PlanKind.GL_SHIFTED1:
            return self._gl_matrix(self.shift_p, self.direction)
        if self.kind is PlanKind.GL_SHIFTED2:
            return self.lambda1 * self._gl_matrix(self.shift_p, self.direction) + self.lambda2 * self._gl_matrix(
                self.shift_q, self.direction
            )
        # FRAC_LAPLACIAN: Riesz sum of the left operator and its mirror image
        left = self.lambda1 * self._gl_matrix(self.shift_p, Direction.LEFT) + self.lambda2 * self._gl_matrix(
            self.shift_q, Direction.LEFT
        )
        right = torch.flip(left, dims=(0, 1))
        return (left + right) / (2 * math.cos(self.order * math.pi / 2))

    @cached_property
    def _caputo_core(self) -> torch.Tensor:
        scale = self.h ** (-self.order) / gamma_fn(2 - self.order)
        return scale * _toeplitz(self.weights, self.n_points)

    def _gl_matrix(self, shift: int, direction: Direction) -> torch.Tensor:
        mat = self.h ** (-self.order) * _toeplitz(self.weights, self.n_points, offset=shift)
        return mat if direction is Direction.LEFT else torch.flip(mat, dims=(0, 1))

    def _rl_matrix(self) -> torch.Tensor:
        n, beta = self.n_points, self.order
        mat = _toeplitz(self.weights, n)
        mat.fill_diagonal_(1.0)
        rows = torch.arange(1, n, dtype=DTYPE)
        mat[1:, 0] = (rows - 1) ** (beta + 1) - (rows - 1 - beta) * rows**beta
        mat[0] = 0.0
        return self.h**beta / gamma_fn(beta + 2) * mat

    def apply(self, u: torch.Tensor) -> torch.Tensor:
        if u.ndim == 0 or u.shape[-1] != self.n_points:
            raise ShapeError(f"Expected {self.n_points} grid values, got shape {tuple(u.shape)}.")
        if self.kind is PlanKind.CAPUTO_L1:
            # differences first so that constants map to exact zeros
            du = torch.diff(u, dim=-1, prepend=u[..., :1])
            return du @ self._caputo_core.mT
        return u @ self.matrix.mT


@lru_cache(maxsize=32)
def build_plan(
    kind: PlanKind,
    order: float,
    h: float,
    n_points: int,
    shift_p: int = 1,
    shift_q: int = 0,
    direction: Direction = Direction.LEFT,
    scheme_order: SchemeOrder = SchemeOrder.SECOND,
) -> FracOpPlan:
    """Construct (and cache) the weight plan of one operator.

    Args:
        kind: Operator family.
        order: Fractional order of the operator.
        h: Grid spacing.
        n_points: Number of grid nodes.
        shift_p: First GL shift.
        shift_q: Second GL shift (second-order schemes only).
        direction: Left or right RL derivative (GL schemes only).
        scheme_order: First or second order GL inside the fractional Laplacian.

    Raises:
        DomainError: If ``order`` or the shifts are not admissible for ``kind``.
    """
    if kind is PlanKind.CAPUTO_L1:
        return FracOpPlan(kind, order, h, n_points, l1_weights(order, n_points))
    if kind is PlanKind.RL_INTEGRAL:
        if not 0 < order <= 1:
            raise DomainError(f"RL integral requires beta in (0, 1], got {order}.")
        m = torch.arange(n_points, dtype=DTYPE)
        w = (m + 1) ** (order + 1) - 2 * m ** (order + 1) + (m - 1).clamp(min=0) ** (order + 1)
        return FracOpPlan(kind, order, h, n_points, w)
    if not 1 < order <= 2:
        raise DomainError(f"Shifted GL operators require alpha in (1, 2], got {order}.")
    g = gl_weights(order, n_points + max(shift_p, shift_q))
    if kind is PlanKind.GL_SHIFTED1:
        return FracOpPlan(kind, order, h, n_points, g, shift_p=shift_p, direction=direction)
    if kind is PlanKind.FRAC_LAPLACIAN and scheme_order is SchemeOrder.FIRST:
        return FracOpPlan(kind, order, h, n_points, g, shift_p=shift_p, lambda1=1.0, lambda2=0.0)
    if shift_p == shift_q:
        raise DomainError(f"Second-order GL requires distinct shifts, got p = q = {shift_p}.")
    lambda1 = (order - 2 * shift_q) / (2 * (shift_p - shift_q))
    lambda2 = (2 * shift_p - order) / (2 * (shift_p - shift_q))
    return FracOpPlan(kind, order, h, n_points, g, shift_p, shift_q, lambda1, lambda2, direction)


def caputo_apply(u: torch.Tensor, alpha: float, grid: UniformGrid) -> torch.Tensor:
    """L1 approximation of the left Caputo derivative of order ``alpha`` in (0, 1) at every node."""
    grid.check_values(u)
    return build_plan(PlanKind.CAPUTO_L1, alpha, grid.h, grid.n_points).apply(u)


def shifted_gl_apply(
    u: torch.Tensor, alpha: float, grid: UniformGrid, shift_p: int = 1, direction: Direction = Direction.LEFT
) -> torch.Tensor:
    """First-order shifted Grünwald-Letnikov approximation of the left or right RL derivative."""
    grid.check_values(u)
    return build_plan(PlanKind.GL_SHIFTED1, alpha, grid.h, grid.n_points, shift_p, 0, direction).apply(u)


def shifted_gl2_apply(
    u: torch.Tensor,
    alpha: float,
    grid: UniformGrid,
    p: int = 1,
    q: int = 0,
    direction: Direction = Direction.LEFT,
) -> torch.Tensor:
    """Second-order weighted combination ``lambda1 * A_p + lambda2 * A_q`` of shifted GL operators."""
    grid.check_values(u)
    return build_plan(PlanKind.GL_SHIFTED2, alpha, grid.h, grid.n_points, p, q, direction).apply(u)


def classical_second_difference(u: torch.Tensor, grid: UniformGrid) -> torch.Tensor:
    """``-u''`` by the three-point stencil with zero exterior values."""
    grid.check_values(u)
    padded = torch.nn.functional.pad(u, (1, 1))
    return -(padded[..., 2:] - 2 * u + padded[..., :-2]) / grid.h**2


def laplacian_plan(alpha: float, grid: UniformGrid, scheme_order: SchemeOrder = SchemeOrder.SECOND) -> FracOpPlan:
    if not 1 < alpha < 2:
        raise DomainError(f"The fractional Laplacian plan requires alpha in (1, 2), got {alpha}.")
    return build_plan(PlanKind.FRAC_LAPLACIAN, alpha, grid.h, grid.n_points, scheme_order=scheme_order)


def laplacian_matrix(alpha: float, grid: UniformGrid, scheme_order: SchemeOrder = SchemeOrder.SECOND) -> torch.Tensor:
    """Dense matrix of :func:`frac_laplacian_apply`, including the ``alpha = 2`` path."""
    if alpha == 2:
        return classical_second_difference(torch.eye(grid.n_points, dtype=DTYPE), grid)
    return laplacian_plan(alpha, grid, scheme_order).matrix


def frac_laplacian_apply(
    u: torch.Tensor, alpha: float, grid: UniformGrid, scheme_order: SchemeOrder = SchemeOrder.SECOND
) -> torch.Tensor:
    """Riesz-form fractional Laplacian ``(-Δ)^(alpha/2)`` with homogeneous Dirichlet exterior.

    ``alpha = 2`` dispatches to the classical stencil; every other ``alpha`` must lie in (1, 2).
    """
    grid.check_values(u)
    if alpha == 2:
        return classical_second_difference(u, grid)
    return laplacian_plan(alpha, grid, scheme_order).apply(u)


def rl_integral_apply(u: torch.Tensor, beta: float, grid: UniformGrid) -> torch.Tensor:
    """Left Riemann-Liouville integral of order ``beta`` in (0, 1] by product integration of piecewise-linear
    ``u`` against the exact kernel."""
    grid.check_values(u)
    return build_plan(PlanKind.RL_INTEGRAL, beta, grid.h, grid.n_points).apply(u)


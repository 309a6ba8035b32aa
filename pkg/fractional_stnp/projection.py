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
Tangent-Space Projection
^^^^^^^^^^^^^^^^^^^^^^^^

Regularized weighted least squares :math:`\min_\gamma \|\sqrt{W}(J\gamma - f)\|^2 + \lambda^2\|\gamma\|^2` together
with the residual, defect and conditioning diagnostics reported at every step.

"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import torch
from pytorch_lightning.utilities import rank_zero_warn
from pytorch_lightning.utilities.exceptions import MisconfigurationException

from fractional_stnp.exceptions import DomainError, NumericalError, ShapeError
from fractional_stnp.fracops import DTYPE

log = logging.getLogger(__name__)


class ProjectionSolver(Enum):
    NORMAL_CHOLESKY = "normal_cholesky"
    STACKED_QR = "stacked_qr"
    SVD = "svd"


class Weighting(Enum):
    TRAPEZOID = "trapezoid"
    UNIT = "unit"


@dataclass(frozen=True)
class ProjectionConfig:
    """Regularization and solver settings.

    Args:
        lam: Absolute regularization parameter. When ``None`` it is ``relative_lambda * sigma_max``.
        relative_lambda: Relative regularization used when ``lam`` is ``None``.
        solver: Factorization used to solve the regularized problem.
        weighting: Trapezoid quadrature weights or unit weights.
        svd_limit: Largest parameter count for which singular values come from a full decomposition.
        rcond: Relative cutoff of the pseudo-inverse when the regularization vanishes.
    """

    lam: Optional[float] = None
    relative_lambda: float = 1e-6
    solver: ProjectionSolver = ProjectionSolver.STACKED_QR
    weighting: Weighting = Weighting.TRAPEZOID
    svd_limit: int = 512
    rcond: float = 1e-12

    def __post_init__(self) -> None:
        if (self.lam is not None and self.lam < 0) or self.relative_lambda < 0:
            raise MisconfigurationException("The regularization parameter must be nonnegative.")
        unregularized = self.lam == 0 or (self.lam is None and self.relative_lambda == 0)
        if unregularized and self.solver is not ProjectionSolver.SVD:
            raise MisconfigurationException("A vanishing regularization parameter requires the svd solver.")


@dataclass
class ProjectionOutcome:
    gamma: torch.Tensor
    delta: float
    ls_residual: float
    sigma_min: float
    sigma_max: float
    contraction: float
    lam: float
    projected_norm: float
    rhs_norm: float
    solver: ProjectionSolver

    def contracts_hold(self, rtol: float = 1e-10, atol: float = 1e-10) -> bool:
        """Whether the residual identity, the defect bound and the contraction bound hold for this solve."""
        gamma_norm = float(torch.linalg.vector_norm(self.gamma))
        identity = math.sqrt(self.ls_residual**2 + self.lam**2 * gamma_norm**2)
        return (
            abs(self.delta - identity) <= rtol * max(identity, atol) + atol
            and self.ls_residual <= self.delta * (1 + rtol) + atol
            and self.projected_norm <= self.contraction * self.rhs_norm + atol
        )


@dataclass(frozen=True)
class SensitivityBound:
    value: float
    infinite: bool = False


def weighted_norm(v: torch.Tensor, weights: Optional[torch.Tensor] = None) -> float:
    if weights is None:
        return float(torch.linalg.vector_norm(v))
    return float(torch.sqrt(torch.sum(weights * v * v)))


def _iterate_extremes(a: torch.Tensor, iters: int = 200) -> Tuple[float, float]:
    """Largest and smallest singular values of ``a`` by power and inverse iteration on ``a^T a``."""
    gram = a.T @ a
    n = gram.shape[0]
    v = torch.ones(n, dtype=DTYPE) / math.sqrt(n)
    for _ in range(iters):
        w = gram @ v
        norm = torch.linalg.vector_norm(w)
        if norm == 0:
            return 0.0, 0.0
        v = w / norm
    mu_max = float(v @ gram @ v)
    chol, info = torch.linalg.cholesky_ex(gram + 1e-14 * mu_max * torch.eye(n, dtype=DTYPE))
    if info != 0:
        return math.sqrt(mu_max), 0.0
    v = torch.ones(n, dtype=DTYPE) / math.sqrt(n)
    for _ in range(iters):
        v = torch.cholesky_solve(v[:, None], chol)[:, 0]
        v = v / torch.linalg.vector_norm(v)
    mu_min = max(float(v @ gram @ v), 0.0)
    return math.sqrt(mu_max), math.sqrt(mu_min)


def singular_extremes(a: torch.Tensor, svd_limit: int = 512) -> Tuple[float, float]:
    """``(sigma_min, sigma_max)`` of ``a``; full decomposition up to ``svd_limit`` columns, iteration beyond."""
    if a.shape[1] <= svd_limit:
        s = torch.linalg.svdvals(a)
        return float(s.min()), float(s.max())
    s_max, s_min = _iterate_extremes(a)
    return s_min, s_max


def _svd_solve(a: torch.Tensor, b: torch.Tensor, lam: float, rcond: float) -> torch.Tensor:
    u, s, vh = torch.linalg.svd(a, full_matrices=False)
    if lam > 0:
        filt = s / (s * s + lam * lam)
    else:
        cutoff = rcond * (float(s.max()) if s.numel() else 0.0)
        filt = torch.where(s > cutoff, 1 / torch.where(s > cutoff, s, torch.ones_like(s)), torch.zeros_like(s))
    return vh.T @ (filt * (u.T @ b))


def solve_projection(
    J: torch.Tensor, f: torch.Tensor, cfg: ProjectionConfig, weights: Optional[torch.Tensor] = None
) -> ProjectionOutcome:
    """Solve the regularized weighted least-squares problem of the tangent-space projection.

    Args:
        J: Parameter Jacobian at the collocation points, shape ``(N_C, N_P)``.
        f: Vector field at the collocation points.
        cfg: Regularization and solver settings.
        weights: Positive quadrature weights; ignored (unit weights) when ``cfg.weighting`` is ``UNIT``.

    Returns:
        The increment ``gamma`` and its diagnostics.

    Raises:
        ShapeError: If ``J`` and ``f`` do not conform.
        NumericalError: If the inputs contain non-finite entries.
    """
    if J.ndim != 2 or f.ndim != 1 or J.shape[0] != f.shape[0] or J.shape[0] < 1 or J.shape[1] < 1:
        raise ShapeError(f"Incompatible projection inputs: J {tuple(J.shape)}, f {tuple(f.shape)}.")
    if not (torch.isfinite(J).all() and torch.isfinite(f).all()):
        raise NumericalError("Non-finite entries in the projection inputs.")
    if weights is None or cfg.weighting is Weighting.UNIT:
        weights = torch.ones_like(f)
    if weights.shape != f.shape or (weights <= 0).any():
        raise DomainError("Quadrature weights must be positive and match the collocation points.")
    sqrt_w = torch.sqrt(weights)
    a, b = sqrt_w[:, None] * J, sqrt_w * f
    n_p = a.shape[1]

    sigma_min, sigma_max = singular_extremes(a, cfg.svd_limit)
    lam = cfg.lam if cfg.lam is not None else cfg.relative_lambda * sigma_max
    solver = cfg.solver
    if lam == 0:
        solver = ProjectionSolver.SVD

    gamma: Optional[torch.Tensor] = None
    if solver is ProjectionSolver.NORMAL_CHOLESKY:
        gram = a.T @ a + lam * lam * torch.eye(n_p, dtype=DTYPE)
        chol, info = torch.linalg.cholesky_ex(gram)
        if info == 0:
            gamma = torch.cholesky_solve((a.T @ b)[:, None], chol)[:, 0]
        else:
            rank_zero_warn("Cholesky factorization of the normal equations failed; falling back to the SVD solver.")
            solver = ProjectionSolver.SVD
    if solver is ProjectionSolver.STACKED_QR:
        stacked = torch.cat([a, lam * torch.eye(n_p, dtype=DTYPE)])
        rhs = torch.cat([b, torch.zeros(n_p, dtype=DTYPE)])
        q, r = torch.linalg.qr(stacked)
        gamma = torch.linalg.solve_triangular(r, (q.T @ rhs)[:, None], upper=True)[:, 0]
    if gamma is None:
        gamma = _svd_solve(a, b, lam, cfg.rcond)

    projected = a @ gamma
    ls_residual = float(torch.linalg.vector_norm(projected - b))
    gamma_norm = float(torch.linalg.vector_norm(gamma))
    delta = math.sqrt(ls_residual**2 + lam * lam * gamma_norm**2)
    contraction = sigma_max**2 / (sigma_max**2 + lam * lam) if sigma_max > 0 else 0.0
    if not (torch.isfinite(gamma).all() and math.isfinite(delta)):
        raise NumericalError("The projection produced non-finite values.")
    return ProjectionOutcome(
        gamma=gamma,
        delta=delta,
        ls_residual=ls_residual,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        contraction=contraction,
        lam=lam,
        projected_norm=float(torch.linalg.vector_norm(projected)),
        rhs_norm=float(torch.linalg.vector_norm(b)),
        solver=solver,
    )


def defect_values(J: torch.Tensor, f: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    """Pointwise defect ``f - J gamma``; its norm under the projection weights equals the least-squares residual."""
    return f - J @ gamma


def sensitivity_bound(J: torch.Tensor, lam: float, weights: Optional[torch.Tensor] = None) -> SensitivityBound:
    """``max_i sigma_i / (sigma_i^2 + lam^2)``, which never exceeds ``1 / (2 lam)``.

    For ``lam = 0`` the value is ``1 / sigma_min``, flagged infinite when ``sigma_min < 1e-12``.
    """
    a = J if weights is None else torch.sqrt(weights)[:, None] * J
    s = torch.linalg.svdvals(a)
    if lam > 0:
        return SensitivityBound(float(torch.max(s / (s * s + lam * lam))))
    s_min = float(s.min())
    if s_min < 1e-12:
        return SensitivityBound(math.inf, infinite=True)
    return SensitivityBound(1 / s_min)

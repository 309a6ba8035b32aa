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
import math

import numpy as np
import pytest
import torch

from fractional_stnp.exceptions import DomainError, ShapeError
from fractional_stnp.fracops import (
    build_plan,
    caputo_apply,
    classical_second_difference,
    Direction,
    DTYPE,
    frac_laplacian_apply,
    gamma_fn,
    gl_weights,
    l1_weights,
    laplacian_matrix,
    PlanKind,
    rl_integral_apply,
    SchemeOrder,
    shifted_gl2_apply,
    shifted_gl_apply,
    UniformGrid,
)


def _observed_order(hs, errors):
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def _rl_derivative_bump(x: torch.Tensor, alpha: float) -> torch.Tensor:
    """Left RL derivative of ``x^3 (1 - x)^3`` extended by zero to the left of 0."""
    out = torch.zeros_like(x)
    for k, c in zip(range(3, 7), (1.0, -3.0, 3.0, -1.0)):
        out = out + c * gamma_fn(k + 1) / gamma_fn(k + 1 - alpha) * x ** (k - alpha)
    return out


def test_grid_validation():
    with pytest.raises(DomainError, match="b > a"):
        UniformGrid(1.0, 0.0, 5)
    with pytest.raises(DomainError, match="two nodes"):
        UniformGrid(0.0, 1.0, 1)
    grid = UniformGrid(-1.0, 1.0, 11)
    assert grid.h == pytest.approx(0.2)
    assert grid.points[-1] == 1.0
    assert float(grid.weights.sum()) == pytest.approx(2.0)
    fine = grid.refined()
    assert fine.n_points == 21
    torch.testing.assert_close(fine.points[::2], grid.points)
    with pytest.raises(ShapeError):
        grid.check_values(torch.zeros(10, dtype=DTYPE))


def test_weight_sequences():
    w = l1_weights(0.5, 4)
    expected = torch.tensor([(k + 1) ** 0.5 - k**0.5 for k in range(4)], dtype=DTYPE)
    torch.testing.assert_close(w, expected)
    assert (w[1:] < w[:-1]).all()
    with pytest.raises(DomainError):
        l1_weights(1.0, 4)

    g = gl_weights(1.5, 20)
    assert g.numel() == 21
    assert g[0] == 1.0 and g[1] == pytest.approx(-1.5)
    # the GL weights of order alpha > 1 sum to zero in the limit and are positive past the first two
    assert (g[2:] > 0).all()
    assert abs(float(gl_weights(1.5, 20000).sum())) < 1e-3
    with pytest.raises(DomainError):
        gamma_fn(0.0)


@pytest.mark.parametrize("alpha", [0.1 * k for k in range(1, 10)])
def test_l1_weights_positive_decreasing(alpha):
    w = l1_weights(alpha, 1001)
    assert w[0] == 1.0
    assert (w > 0).all()
    assert (w[1:] < w[:-1]).all()


@pytest.mark.parametrize("alpha", [0.3, 0.7, 1.0, 1.5, 1.6, 2.0])
def test_gl_weights_match_binomial_product(alpha):
    direct = [1.0]
    for k in range(1, 21):
        direct.append(direct[-1] * (k - 1 - alpha) / k)
    torch.testing.assert_close(gl_weights(alpha, 20), torch.tensor(direct, dtype=DTYPE), rtol=1e-12, atol=1e-15)


def test_caputo_annihilates_constants():
    grid = UniformGrid(0.0, 1.0, 64)
    u = torch.full((grid.n_points,), 3.7, dtype=DTYPE)
    assert torch.equal(caputo_apply(u, 0.4, grid), torch.zeros_like(u))


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_caputo_l1_order(alpha):
    """The L1 scheme converges at order ``2 - alpha`` on a cubic."""
    hs, errors = [], []
    for n in (65, 129, 257, 513, 1025):
        grid = UniformGrid(0.0, 1.0, n)
        x = grid.points
        exact = gamma_fn(4) / gamma_fn(4 - alpha) * x ** (3 - alpha)
        errors.append(float((caputo_apply(x**3, alpha, grid) - exact).abs().max()))
        hs.append(grid.h)
    assert abs(_observed_order(hs, errors) - (2 - alpha)) < 0.15


@pytest.mark.parametrize("second_order, expected", [(False, 1.0), (True, 2.0)])
def test_shifted_gl_order(second_order, expected):
    alpha = 1.6
    hs, errors = [], []
    for n in (65, 129, 257, 513):
        grid = UniformGrid(0.0, 1.0, n)
        x = grid.points
        u = x**3 * (1 - x) ** 3
        approx = shifted_gl2_apply(u, alpha, grid) if second_order else shifted_gl_apply(u, alpha, grid)
        interior = (x >= 0.25) & (x <= 0.75)
        errors.append(float((approx - _rl_derivative_bump(x, alpha))[interior].abs().max()))
        hs.append(grid.h)
    assert abs(_observed_order(hs, errors) - expected) < 0.25


def test_shifted_gl_classical_limit():
    grid = UniformGrid(0.0, 1.0, 50)
    gen = torch.Generator().manual_seed(7)
    u = torch.randn((100, grid.n_points), generator=gen, dtype=DTYPE)
    stencil = -classical_second_difference(u, grid)
    scale = float(stencil.abs().max())
    torch.testing.assert_close(shifted_gl_apply(u, 2.0, grid), stencil, rtol=1e-13, atol=1e-13 * scale)
    torch.testing.assert_close(frac_laplacian_apply(u, 2.0, grid), classical_second_difference(u, grid))


def test_right_derivative_mirrors_left():
    grid = UniformGrid(0.0, 1.0, 40)
    x = grid.points
    u = torch.sin(3 * x) * x * (1 - x)
    right = shifted_gl_apply(u, 1.4, grid, direction=Direction.RIGHT)
    left_of_mirror = shifted_gl_apply(torch.flip(u, (0,)), 1.4, grid)
    torch.testing.assert_close(right, torch.flip(left_of_mirror, (0,)))


def test_second_order_shift_weights():
    plan = build_plan(PlanKind.GL_SHIFTED2, 1.6, 0.1, 11)
    assert plan.lambda1 + plan.lambda2 == pytest.approx(1.0)
    assert plan.lambda1 == pytest.approx(0.8)
    with pytest.raises(DomainError, match="distinct shifts"):
        build_plan(PlanKind.GL_SHIFTED2, 1.6, 0.1, 11, 1, 1)
    with pytest.raises(DomainError, match="alpha in"):
        build_plan(PlanKind.GL_SHIFTED1, 0.6, 0.1, 11)
    assert build_plan(PlanKind.GL_SHIFTED2, 1.6, 0.1, 11) is plan


@pytest.mark.parametrize("scheme_order", [SchemeOrder.FIRST, SchemeOrder.SECOND])
def test_fractional_laplacian_symmetric_positive(scheme_order):
    grid = UniformGrid(-1.0, 1.0, 60)
    mat = laplacian_matrix(1.5, grid, scheme_order)
    torch.testing.assert_close(mat, mat.T)
    assert float(torch.linalg.eigvalsh(mat).min()) > 0


def test_fractional_laplacian_domain():
    grid = UniformGrid(-1.0, 1.0, 20)
    u = torch.zeros(grid.n_points, dtype=DTYPE)
    for alpha in (1.0, 2.5):
        with pytest.raises(DomainError):
            frac_laplacian_apply(u, alpha, grid)
    stencil = classical_second_difference(torch.eye(20, dtype=DTYPE), grid)
    torch.testing.assert_close(laplacian_matrix(2.0, grid), stencil)


def test_fractional_laplacian_near_classical_order():
    grid = UniformGrid(-1.0, 1.0, 401)
    x = grid.points
    lap = frac_laplacian_apply(torch.sin(math.pi * x), 1.999, grid)
    exact = math.pi**2 * torch.sin(math.pi * x)
    mid = (x.abs() >= 0.3) & (x.abs() <= 0.7)
    assert float(((lap - exact)[mid].abs() / exact[mid].abs()).max()) < 5e-2


@pytest.mark.parametrize("beta", [0.3, 0.8, 1.0])
def test_rl_integral_exact_for_linear(beta):
    grid = UniformGrid(0.0, 2.0, 41)
    x = grid.points
    u = 1 + 2 * x
    exact = x**beta / gamma_fn(beta + 1) + 2 * x ** (beta + 1) / gamma_fn(beta + 2)
    torch.testing.assert_close(rl_integral_apply(u, beta, grid), exact, rtol=1e-12, atol=1e-12)


def test_rl_integral_domain():
    grid = UniformGrid(0.0, 1.0, 5)
    with pytest.raises(DomainError):
        rl_integral_apply(torch.ones(5, dtype=DTYPE), 1.5, grid)


def test_batched_application():
    grid = UniformGrid(0.0, 1.0, 30)
    u = torch.stack([grid.points**k for k in range(1, 4)])
    batched = caputo_apply(u, 0.5, grid)
    for row, values in zip(batched, u):
        torch.testing.assert_close(row, caputo_apply(values, 0.5, grid))
    with pytest.raises(ShapeError):
        caputo_apply(torch.ones(29, dtype=DTYPE), 0.5, grid)
    assert math.isclose(float(caputo_apply(grid.points, 0.5, grid)[0]), 0.0)

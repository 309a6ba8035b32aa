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

import pytest
import torch

from fractional_stnp.exceptions import DomainError
from fractional_stnp.fracops import DTYPE, SchemeOrder, UniformGrid
from fractional_stnp.models import (
    fbefl_rhs,
    FbeflConfig,
    fbenn_rhs,
    FbennConfig,
    manufactured_config,
    manufactured_forcing,
    manufactured_solution,
    rhs,
)


def _manufactured_derivative(x: torch.Tensor, t: float) -> torch.Tensor:
    return math.exp(-t) * 3 * x**2 * (1 - x) ** 2 * (1 - 2 * x)


def test_parameter_domains():
    with pytest.raises(DomainError, match="alpha"):
        FbeflConfig(alpha=2.5)
    with pytest.raises(DomainError, match="alpha"):
        FbeflConfig(alpha=1.0)
    with pytest.raises(DomainError, match="epsilon"):
        FbeflConfig(epsilon=0.0)
    with pytest.raises(DomainError, match="beta"):
        FbennConfig(beta=1.2)
    assert FbennConfig().epsilon == pytest.approx(1 / (150 * math.pi))


def test_zero_state_is_stationary():
    grid = UniformGrid(-1.0, 1.0, 41)
    zero = torch.zeros(grid.n_points, dtype=DTYPE)
    assert torch.equal(fbefl_rhs(zero, zero, 0.0, FbeflConfig(), grid), zero)
    for beta in (0.0, 0.6, 1.0):
        assert torch.equal(fbenn_rhs(zero, zero, zero, 0.0, FbennConfig(beta=beta), grid), zero)


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_fbenn_local_limits(beta):
    grid = UniformGrid(-1.0, 1.0, 31)
    x = grid.points
    u, ux, uxx = torch.sin(x), torch.cos(x), -torch.sin(x)
    cfg = FbennConfig(beta=beta, epsilon=0.05)
    nonlinear = u * ux if beta == 1.0 else 0.5 * ux * ux
    torch.testing.assert_close(fbenn_rhs(u, uxx, ux, 0.0, cfg, grid), 0.05 * uxx - nonlinear)
    torch.testing.assert_close(rhs(cfg, u, ux, uxx, 0.0, grid), 0.05 * uxx - nonlinear)


def test_fbenn_constant_state():
    grid = UniformGrid(-1.0, 1.0, 31)
    u = torch.full((grid.n_points,), 0.7, dtype=DTYPE)
    zero = torch.zeros_like(u)
    assert torch.equal(fbenn_rhs(u, zero, zero, 0.0, FbennConfig(beta=0.8), grid), zero)


def test_fbefl_classical_order():
    grid = UniformGrid(0.0, 1.0, 21)
    x = grid.points
    u = x * (1 - x)
    ux = 1 - 2 * x
    cfg = FbeflConfig(alpha=2.0, epsilon=0.1)
    interior = slice(1, -1)
    # -u'' = 2 for the parabola, exact for the three-point stencil away from the boundary
    expected = -0.1 * 2.0 - u * ux
    torch.testing.assert_close(fbefl_rhs(u, ux, 0.0, cfg, grid)[interior], expected[interior])


def test_manufactured_forcing_consistency():
    """With exact ``u`` and ``u_x`` the discrete right-hand side approaches ``u_t = -u`` as the grid is refined."""
    t = 0.3
    errors = []
    for n in (101, 401):
        grid = UniformGrid(0.0, 1.0, n)
        x = grid.points
        cfg = manufactured_config(alpha=1.6, epsilon=1.0, gl_order=SchemeOrder.SECOND)
        u = manufactured_solution(x, t)
        f = fbefl_rhs(u, _manufactured_derivative(x, t), t, cfg, grid)
        errors.append(float(torch.sqrt(torch.sum(grid.weights * (f + u) ** 2))))
        scale = float(torch.sqrt(torch.sum(grid.weights * u**2)))
    assert errors[1] < errors[0] / 3
    assert errors[1] < 1e-2 * scale


def test_manufactured_forcing_scalar():
    value = manufactured_forcing(0.5, 0.0, 1.6, 0.01)
    assert isinstance(value, float)
    tensor = manufactured_forcing(torch.tensor([0.5], dtype=DTYPE), 0.0, 1.6, 0.01)
    assert float(tensor[0]) == pytest.approx(value)


def test_manufactured_forcing_at_origin():
    # fractional terms at x = 0 reduce to the Gamma ratios of the (1 - x) powers
    ratios = 6 / math.gamma(2.4) - 3 * 24 / math.gamma(3.4) + 3 * 120 / math.gamma(4.4) - 720 / math.gamma(5.4)
    expected = ratios / (2 * math.cos(0.8 * math.pi))
    assert manufactured_forcing(0.0, 0.0, 1.6, 1.0) == pytest.approx(expected, rel=0, abs=1e-12)


def test_forcing_shifts_rhs_exactly():
    grid = UniformGrid(0.0, 1.0, 51)
    u, ux = torch.sin(math.pi * grid.points), math.pi * torch.cos(math.pi * grid.points)

    def forcing(x, t):
        return torch.cos(3 * x) + t

    plain = fbefl_rhs(u, ux, 0.4, FbeflConfig(alpha=1.7, epsilon=0.2), grid)
    forced = fbefl_rhs(u, ux, 0.4, FbeflConfig(alpha=1.7, epsilon=0.2, forcing=forcing), grid)
    torch.testing.assert_close(forced - plain, forcing(grid.points, 0.4), rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "cfg",
    [
        FbeflConfig(alpha=1.6, gl_order=SchemeOrder.FIRST),
        FbeflConfig(alpha=1.6, gl_order=SchemeOrder.SECOND),
        FbeflConfig(alpha=2.0),
        manufactured_config(alpha=1.3, epsilon=1.0),
        FbennConfig(beta=0.0),
        FbennConfig(beta=0.4),
        FbennConfig(beta=0.8),
        FbennConfig(beta=1.0),
    ],
    ids=["gl1", "gl2", "classical", "manufactured", "fbenn0", "fbenn04", "fbenn08", "fbenn1"],
)
def test_rhs_finite_for_finite_inputs(cfg):
    grid = UniformGrid(0.0, 1.0, 101)
    gen = torch.Generator().manual_seed(1)
    for scale in (1e-8, 1.0, 1e3):
        u, ux, uxx = scale * torch.randn((3, grid.n_points), generator=gen, dtype=DTYPE)
        assert torch.isfinite(rhs(cfg, u, ux, uxx, 0.5, grid)).all()

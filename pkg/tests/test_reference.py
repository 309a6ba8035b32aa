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
from fractional_stnp.fracops import DTYPE, UniformGrid
from fractional_stnp.models import FbeflConfig, FbennConfig, manufactured_config, manufactured_solution
from fractional_stnp.projection import weighted_norm
from fractional_stnp.reference import (
    boundary_trace,
    central_diff_fbefl,
    classical_cole_hopf,
    fbenn_exact,
    godunov_flux,
    HopfColeConfig,
    HopfColeOracle,
    load_oracle,
    relative_l2_error,
    save_oracle,
    total_variation,
    truncation_proxy,
    upwind_fbefl,
)
from tests.helpers.runif import RunIf


def neg_sin(x: torch.Tensor) -> torch.Tensor:
    return -torch.sin(math.pi * x)


def _test_grid(n: int = 401) -> UniformGrid:
    return UniformGrid(-1.0, 1.0, n)


@pytest.mark.parametrize(
    "ul, ur, expected",
    [(1.0, -1.0, 0.5), (-1.0, 1.0, 0.0), (2.0, 1.0, 2.0), (-2.0, -1.0, 0.5), (1.0, 2.0, 0.5), (0.0, 0.0, 0.0)],
)
def test_godunov_flux(ul, ur, expected):
    flux = godunov_flux(torch.tensor([ul], dtype=DTYPE), torch.tensor([ur], dtype=DTYPE))
    assert float(flux[0]) == expected


def test_upwind_total_variation_does_not_grow():
    grid = UniformGrid(-1.0, 1.0, 51)
    cfg = FbeflConfig(alpha=1.6, epsilon=1e-15)
    gen = torch.Generator().manual_seed(0)
    for _ in range(20):
        u0 = torch.randn(grid.n_points, generator=gen, dtype=DTYPE)
        u0[0] = u0[-1] = 0.0
        traj = upwind_fbefl(grid, cfg, u0, dt=0.01, t_end=0.01)
        assert not traj.blew_up
        assert total_variation(traj.states[-1]) <= total_variation(u0) + 1e-9


@pytest.mark.parametrize("solver", [central_diff_fbefl, upwind_fbefl])
def test_zero_data_stays_zero(solver):
    grid = UniformGrid(-1.0, 1.0, 41)
    traj = solver(grid, FbeflConfig(), torch.zeros(grid.n_points, dtype=DTYPE), 0.01, 0.1, record_times=[0.05])
    assert traj.times == [0.0, 0.05, 0.1]
    for state in traj.states:
        assert torch.equal(state, torch.zeros_like(state))


def test_grid_solvers_agree_at_high_viscosity():
    grid = _test_grid(401)
    cfg = FbeflConfig(alpha=1.6, epsilon=0.5)
    central = central_diff_fbefl(grid, cfg, neg_sin, 1e-3, 0.1)
    upwind = upwind_fbefl(grid, cfg, neg_sin, 1e-3, 0.1)
    assert not (central.blew_up or upwind.blew_up)
    assert relative_l2_error(upwind.at(0.1), central.at(0.1), grid.weights) < 1e-2


@RunIf(slow=True)
def test_grid_solvers_agree_on_fine_grid():
    grid = _test_grid(1601)
    cfg = FbeflConfig(alpha=1.6, epsilon=0.5)
    central = central_diff_fbefl(grid, cfg, neg_sin, 1e-3, 0.1)
    upwind = upwind_fbefl(grid, cfg, neg_sin, 1e-3, 0.1)
    assert weighted_norm(upwind.at(0.1) - central.at(0.1), grid.weights) <= 1e-3


def test_grid_solver_substeps_warn():
    grid = UniformGrid(-1.0, 1.0, 81)
    with pytest.warns(UserWarning, match="Reducing the reference step"):
        upwind_fbefl(grid, FbeflConfig(epsilon=0.01), neg_sin, 0.1, 0.1)


def test_oracle_of_zero_data():
    cfg = HopfColeConfig(beta=0.8, fine_n=201, quad_n=201, t_max=0.5)
    xs = torch.linspace(-1.0, 1.0, 17, dtype=DTYPE)
    values = fbenn_exact(xs, 0.3, torch.zeros_like, cfg)
    assert float(values.abs().max()) < 1e-12


def test_oracle_validation():
    with pytest.raises(DomainError, match="beta"):
        HopfColeConfig(beta=0.0)
    oracle = HopfColeOracle(neg_sin, HopfColeConfig(fine_n=101, quad_n=101))
    with pytest.raises(DomainError, match="t > 0"):
        oracle.profile(0.0)


def test_oracle_matches_classical_cole_hopf():
    eps = 1 / (150 * math.pi)
    cfg = HopfColeConfig(beta=1.0, epsilon=eps, fine_n=1601, quad_n=1601, t_max=0.5)
    xs = _test_grid(512).points
    weights = _test_grid(512).weights
    for t in (0.25, 0.5):
        oracle = fbenn_exact(xs, t, neg_sin, cfg)
        classical = classical_cole_hopf(xs, t, neg_sin, eps, -1.0, 1.0, n=1601)
        assert relative_l2_error(oracle, classical, weights) < 1e-3


def test_oracle_short_time_limit():
    cfg = HopfColeConfig(beta=1.0, fine_n=2001, quad_n=2001, t_max=1e-4)
    grid = _test_grid(512)
    values = fbenn_exact(grid.points, 1e-4, neg_sin, cfg)
    assert relative_l2_error(values, neg_sin(grid.points), grid.weights) < 5e-2


def test_boundary_trace_starts_at_initial_data():
    cfg = HopfColeConfig(beta=0.8, fine_n=201, quad_n=201, t_max=0.1)
    oracle = HopfColeOracle(neg_sin, cfg)
    trace = boundary_trace(oracle, neg_sin, 0.1, n_samples=5)
    assert trace.g_a(0.0) == pytest.approx(float(neg_sin(torch.tensor(-1.0, dtype=DTYPE))), abs=1e-14)
    assert trace.g_b(0.0) == pytest.approx(float(neg_sin(torch.tensor(1.0, dtype=DTYPE))), abs=1e-14)
    assert math.isfinite(trace.dg_a(0.05)) and math.isfinite(trace.dg_b(0.05))


def _exact_sampler(x: torch.Tensor):
    return 2 * x + 1, torch.full_like(x, 2.0), torch.zeros_like(x)


def test_truncation_proxy_vanishes_for_local_model():
    grid = UniformGrid(-1.0, 1.0, 33)
    for beta in (0.0, 1.0):
        assert truncation_proxy(_exact_sampler, 0.0, FbennConfig(beta=beta), grid) < 1e-12


def test_truncation_proxy_decreases_under_refinement():
    cfg = manufactured_config(1.6, 1.0)

    def sampler(x):
        ux = 3 * x**2 * (1 - x) ** 2 * (1 - 2 * x)
        return manufactured_solution(x, 0.0), ux, torch.zeros_like(x)

    proxies = [truncation_proxy(sampler, 0.0, cfg, UniformGrid(0.0, 1.0, n)) for n in (41, 81, 161)]
    assert all(p >= 0 for p in proxies)
    assert proxies[2] < proxies[1] < proxies[0]
    assert proxies[0] / proxies[2] > 4


def test_error_metrics():
    assert total_variation(torch.tensor([0.0, 1.0, -1.0, 0.0], dtype=DTYPE)) == 4.0
    w = torch.ones(3, dtype=DTYPE)
    ref = torch.tensor([3.0, 0.0, 4.0], dtype=DTYPE)
    assert relative_l2_error(ref * 1.1, ref, w) == pytest.approx(0.1)


def test_oracle_cache(tmp_path):
    meta = {"beta": 0.8, "epsilon": 0.01, "t": 0.5, "fine_n": 101}
    assert load_oracle(tmp_path, meta) is None
    xs = torch.linspace(-1.0, 1.0, 11, dtype=DTYPE)
    values = torch.sin(xs) / 3
    path = save_oracle(tmp_path, meta, xs, values)
    assert path.name.startswith("oracle_")
    cached_xs, cached = load_oracle(tmp_path, meta)
    assert torch.equal(cached_xs, xs) and torch.equal(cached, values)
    assert load_oracle(tmp_path, {**meta, "t": 0.25}) is None

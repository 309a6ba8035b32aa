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
from pytorch_lightning.utilities.exceptions import MisconfigurationException

from fractional_stnp.exceptions import DomainError, NumericalError, ShapeError
from fractional_stnp.fracops import DTYPE
from fractional_stnp.projection import (
    defect_values,
    ProjectionConfig,
    ProjectionSolver,
    sensitivity_bound,
    singular_extremes,
    solve_projection,
    weighted_norm,
)


def _instance(seed: int, n_c: int = 30, n_p: int = 10):
    gen = torch.Generator().manual_seed(seed)
    J = torch.randn((n_c, n_p), generator=gen, dtype=DTYPE)
    f = torch.randn(n_c, generator=gen, dtype=DTYPE)
    w = 0.1 + torch.rand(n_c, generator=gen, dtype=DTYPE)
    return J, f, w


def _with_singular_values(s: torch.Tensor, n_c: int, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    u, _ = torch.linalg.qr(torch.randn((n_c, s.numel()), generator=gen, dtype=DTYPE))
    v, _ = torch.linalg.qr(torch.randn((s.numel(), s.numel()), generator=gen, dtype=DTYPE))
    return u @ torch.diag(s) @ v.T


@pytest.mark.parametrize("solver", list(ProjectionSolver))
def test_residual_identity_and_contraction(solver):
    for seed in range(100):
        J, f, w = _instance(seed)
        out = solve_projection(J, f, ProjectionConfig(lam=0.1, solver=solver), w)
        assert out.contracts_hold()
        assert out.contraction < 1
        defect = defect_values(J, f, out.gamma)
        assert weighted_norm(defect, w) == pytest.approx(out.ls_residual, rel=1e-10)
        assert weighted_norm(defect, w) <= weighted_norm(f, w) * (1 + 1e-12)
        assert out.ls_residual <= out.delta


def test_solvers_agree():
    J, f, w = _instance(0, 40, 8)
    results = [solve_projection(J, f, ProjectionConfig(lam=1e-3, solver=s), w).gamma for s in ProjectionSolver]
    for gamma in results[1:]:
        torch.testing.assert_close(gamma, results[0], rtol=1e-8, atol=1e-10)


def test_regularization_shrinks_increment():
    for seed in range(100):
        J, f, w = _instance(seed)
        outcomes = [solve_projection(J, f, ProjectionConfig(lam=lam), w) for lam in (1e-3, 1e-2, 0.1, 1.0)]
        norms = [float(out.gamma.norm()) for out in outcomes]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_relative_regularization():
    J, f, w = _instance(3)
    out = solve_projection(J, f, ProjectionConfig(relative_lambda=1e-2), w)
    assert out.lam == pytest.approx(1e-2 * out.sigma_max)


def test_sensitivity_bound():
    for seed in range(10):
        J, _, w = _instance(seed)
        for lam in (1e-3, 0.1, 2.0):
            bound = sensitivity_bound(J, lam, w)
            assert not bound.infinite
            assert bound.value <= 1 / (2 * lam) * (1 + 1e-12)
    rank_deficient = torch.ones((5, 3), dtype=DTYPE)
    assert sensitivity_bound(rank_deficient, 0.0).infinite
    J, _, _ = _instance(0)
    assert sensitivity_bound(J, 0.0).value == pytest.approx(1 / float(torch.linalg.svdvals(J).min()))


def test_unregularized_exact_representation():
    J, _, _ = _instance(5)
    gen = torch.Generator().manual_seed(1)
    f = J @ torch.randn(J.shape[1], generator=gen, dtype=DTYPE)
    out = solve_projection(J, f, ProjectionConfig(lam=0.0, solver=ProjectionSolver.SVD))
    assert out.lam == 0
    assert out.delta < 1e-10 * float(f.norm())
    with pytest.raises(MisconfigurationException, match="svd"):
        ProjectionConfig(lam=0.0)
    with pytest.raises(MisconfigurationException, match="nonnegative"):
        ProjectionConfig(lam=-1.0)


def test_zero_field_gives_zero_increment():
    J, _, w = _instance(2)
    out = solve_projection(J, torch.zeros(J.shape[0], dtype=DTYPE), ProjectionConfig(lam=0.1), w)
    assert torch.equal(out.gamma, torch.zeros_like(out.gamma))
    assert out.delta == 0


def test_invalid_inputs():
    J, f, w = _instance(0)
    with pytest.raises(ShapeError):
        solve_projection(J, f[:-1], ProjectionConfig(lam=0.1))
    with pytest.raises(DomainError, match="weights"):
        solve_projection(J, f, ProjectionConfig(lam=0.1), -w)
    bad = f.clone()
    bad[3] = math.nan
    with pytest.raises(NumericalError, match="Non-finite"):
        solve_projection(J, bad, ProjectionConfig(lam=0.1))


def test_iterative_singular_extremes():
    s = torch.linspace(1.0, 10.0, 20, dtype=DTYPE)
    a = _with_singular_values(s, 60, 4)
    s_min, s_max = singular_extremes(a, svd_limit=0)
    assert s_max == pytest.approx(10.0, rel=1e-8)
    assert s_min == pytest.approx(1.0, rel=1e-6)
    assert singular_extremes(a) == pytest.approx((1.0, 10.0), rel=1e-10)

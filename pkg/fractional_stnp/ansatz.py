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
Nonlinear Ansatz
^^^^^^^^^^^^^^^^

The tanh multilayer perceptron :math:`\hat{u}(x, t) = D(x)\,\Phi(x; q) + G(x, t)` evolved by the sequential-in-time
solver, together with its exact spatial derivatives, its parameter Jacobian, Xavier initialization and the
Lightning-driven fit of the initial condition.

"""
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pytorch_lightning as pl
import torch
from pytorch_lightning.utilities import rank_zero_info, rank_zero_warn
from pytorch_lightning.utilities.exceptions import MisconfigurationException
from pytorch_lightning.utilities.rank_zero import rank_zero_debug
from torch.utils.data import DataLoader, IterableDataset

from fractional_stnp.exceptions import NumericalError, ShapeError
from fractional_stnp.fracops import DTYPE

log = logging.getLogger(__name__)

warnings.filterwarnings("ignore", ".*does not have many workers.*")

PARAM_LAYOUT_VERSION = 1

Triple = Tuple[torch.Tensor, torch.Tensor, torch.Tensor]


class BoundaryKind(Enum):
    NONE = "none"
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


class FeatureMap(Enum):
    IDENTITY = "identity"
    TRIG_PERIODIC = "trig_periodic"


def _zero(t: float) -> float:
    return 0.0


@dataclass(frozen=True)
class BoundaryWrapper:
    """Hard enforcement of boundary conditions around the raw network output.

    For ``DIRICHLET`` the wrapped output is ``D(x) * net(x) + G(x, t)`` with the mask ``D(x) = (x - a)(b - x) /
    ((b - a) / 2)^2`` and the linear lift ``G(x, t) = g_a(t) (b - x) / (b - a) + g_b(t) (x - a) / (b - a)``.
    ``PERIODIC`` leaves the output untouched; periodicity comes from the trigonometric feature map.

    Args:
        kind: Boundary treatment.
        a: Left endpoint of the domain.
        b: Right endpoint of the domain.
        g_a: Boundary value at ``a`` as a function of time.
        g_b: Boundary value at ``b`` as a function of time.
        dg_a: Time derivative of ``g_a``.
        dg_b: Time derivative of ``g_b``.
    """

    kind: BoundaryKind = BoundaryKind.NONE
    a: float = 0.0
    b: float = 1.0
    g_a: Callable[[float], float] = _zero
    g_b: Callable[[float], float] = _zero
    dg_a: Callable[[float], float] = _zero
    dg_b: Callable[[float], float] = _zero

    @property
    def time_dependent(self) -> bool:
        return self.kind is BoundaryKind.DIRICHLET and not (self.dg_a is _zero and self.dg_b is _zero)

    def mask(self, x: torch.Tensor) -> Triple:
        if self.kind is not BoundaryKind.DIRICHLET:
            return torch.ones_like(x), torch.zeros_like(x), torch.zeros_like(x)
        c = ((self.b - self.a) / 2) ** 2
        return (x - self.a) * (self.b - x) / c, (self.a + self.b - 2 * x) / c, torch.full_like(x, -2 / c)

    def lift(self, x: torch.Tensor, t: float) -> Tuple[torch.Tensor, torch.Tensor]:
        if self.kind is not BoundaryKind.DIRICHLET:
            return torch.zeros_like(x), torch.zeros_like(x)
        ga, gb, width = float(self.g_a(t)), float(self.g_b(t)), self.b - self.a
        return ga * (self.b - x) / width + gb * (x - self.a) / width, torch.full_like(x, (gb - ga) / width)

    def lift_dt(self, x: torch.Tensor, t: float) -> torch.Tensor:
        if self.kind is not BoundaryKind.DIRICHLET:
            return torch.zeros_like(x)
        dga, dgb, width = float(self.dg_a(t)), float(self.dg_b(t)), self.b - self.a
        return dga * (self.b - x) / width + dgb * (x - self.a) / width


@dataclass(frozen=True)
class AnsatzSpec:
    """Architecture of the tanh network and its boundary treatment.

    Args:
        layer_widths: Widths from the feature layer to the scalar output, e.g. ``(1, 10, 10, 1)``.
        bc: Boundary wrapper applied to the network output.
        feature_map: Input feature map; ``TRIG_PERIODIC`` maps ``x`` to ``(sin(kx), cos(kx))`` with
            ``k = 2 pi / period``.
        period: Period ``L`` of the trigonometric feature map.
        seed: Seed of the Xavier initialization.

    Raises:
        MisconfigurationException: If the widths do not match the feature map or the wrapper is inconsistent.
    """

    layer_widths: Tuple[int, ...] = (1, 10, 10, 1)
    bc: BoundaryWrapper = field(default_factory=BoundaryWrapper)
    feature_map: FeatureMap = FeatureMap.IDENTITY
    period: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        widths = self.layer_widths
        in_dim = 1 if self.feature_map is FeatureMap.IDENTITY else 2
        if len(widths) < 2 or widths[0] != in_dim or widths[-1] != 1 or min(widths) < 1:
            raise MisconfigurationException(
                f"Layer widths {list(widths)} must start with the feature dimension {in_dim} and end with 1."
            )
        if self.bc.kind is BoundaryKind.PERIODIC and self.feature_map is not FeatureMap.TRIG_PERIODIC:
            raise MisconfigurationException("A periodic boundary wrapper requires the trig_periodic feature map.")
        if self.period <= 0:
            raise MisconfigurationException(f"The feature-map period must be positive, got {self.period}.")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        """``(fan_out, fan_in)`` of each affine layer."""
        return list(zip(self.layer_widths[1:], self.layer_widths[:-1]))

    @property
    def num_params(self) -> int:
        return sum(fo * fi + fo for fo, fi in self.layer_shapes)

    def describe(self) -> Dict[str, Any]:
        return {
            "layer_widths": list(self.layer_widths),
            "feature_map": self.feature_map.value,
            "period": self.period,
            "bc": self.bc.kind.value,
            "domain": [self.bc.a, self.bc.b],
            "seed": self.seed,
            "layout_version": PARAM_LAYOUT_VERSION,
        }


@dataclass
class OptimizerConfig:
    """Adam settings for the initial-condition fit.

    Args:
        lr: Adam step size.
        beta1: First-moment decay.
        beta2: Second-moment decay.
        iterations: Maximum number of Adam steps.
        tolerance: Training stops once the best mean squared misfit is at or below this value.
        n_samples: Number of uniform sample points of the initial condition.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 50000
    tolerance: float = 0.0
    n_samples: int = 300


def unpack_params(q: torch.Tensor, spec: AnsatzSpec) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    """Split the flat parameter vector into per-layer ``(W, b)`` views.

    The layout is layer-major: each layer contributes its ``fan_out x fan_in`` weight matrix in row-major order
    followed by its ``fan_out`` biases.
    """
    if q.ndim != 1 or q.numel() != spec.num_params:
        raise ShapeError(f"Expected a flat parameter vector of length {spec.num_params}, got {tuple(q.shape)}.")
    sizes = [n for fo, fi in spec.layer_shapes for n in (fo * fi, fo)]
    chunks = torch.split(q, sizes)
    return [(chunks[2 * i].view(fo, fi), chunks[2 * i + 1]) for i, (fo, fi) in enumerate(spec.layer_shapes)]


def pack_params(layers: List[Tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    return torch.cat([t.reshape(-1) for w, b in layers for t in (w, b)])


def init_xavier(spec: AnsatzSpec) -> torch.Tensor:
    """Xavier-uniform weights and zero biases drawn from a generator seeded with ``spec.seed``."""
    gen = torch.Generator().manual_seed(spec.seed)
    layers = []
    for fo, fi in spec.layer_shapes:
        bound = math.sqrt(6.0 / (fi + fo))
        w = (2 * torch.rand((fo, fi), generator=gen, dtype=DTYPE) - 1) * bound
        layers.append((w, torch.zeros(fo, dtype=DTYPE)))
    return pack_params(layers)


def _features(x: torch.Tensor, spec: AnsatzSpec) -> Triple:
    if spec.feature_map is FeatureMap.IDENTITY:
        return x[:, None], torch.ones_like(x)[:, None], torch.zeros_like(x)[:, None]
    k = 2 * math.pi / spec.period
    s, c = torch.sin(k * x), torch.cos(k * x)
    return torch.stack([s, c], dim=1), torch.stack([k * c, -k * s], dim=1), torch.stack([-k * k * s, -k * k * c], dim=1)


def _network_value(q: torch.Tensor, spec: AnsatzSpec, x: torch.Tensor) -> torch.Tensor:
    z = _features(x, spec)[0]
    layers = unpack_params(q, spec)
    for i, (w, b) in enumerate(layers):
        z = z @ w.T + b
        if i < len(layers) - 1:
            z = torch.tanh(z)
    return z[:, 0]


def _network_triple(q: torch.Tensor, spec: AnsatzSpec, x: torch.Tensor) -> Triple:
    z, dz, d2z = _features(x, spec)
    layers = unpack_params(q, spec)
    for i, (w, b) in enumerate(layers):
        z, dz, d2z = z @ w.T + b, dz @ w.T, d2z @ w.T
        if i < len(layers) - 1:
            a = torch.tanh(z)
            s = 1 - a * a
            # tanh'' = -2 tanh (1 - tanh^2)
            z, dz, d2z = a, s * dz, s * d2z - 2 * a * s * dz * dz
    return z[:, 0], dz[:, 0], d2z[:, 0]


def _as_points(x: Union[float, torch.Tensor]) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE).reshape(-1)


def eval_u(q: torch.Tensor, spec: AnsatzSpec, x: Union[float, torch.Tensor], t: float = 0.0) -> torch.Tensor:
    """Values of the wrapped ansatz at the points ``x``."""
    xs = _as_points(x)
    mask = spec.bc.mask(xs)[0]
    return mask * _network_value(q, spec, xs) + spec.bc.lift(xs, t)[0]


def eval_u_ux_uxx(q: torch.Tensor, spec: AnsatzSpec, x: Union[float, torch.Tensor], t: float = 0.0) -> Triple:
    """Exact ``(u, u_x, u_xx)`` of the wrapped ansatz, propagated through every layer, the feature map and the
    boundary wrapper.

    Args:
        q: Flat parameter vector.
        spec: Network architecture.
        x: A scalar point or a 1-D tensor of points.
        t: Time, used by time-dependent boundary lifts.

    Returns:
        Three tensors with the shape of ``x``.
    """
    xs = _as_points(x)
    n, nx, nxx = _network_triple(q, spec, xs)
    d, dx, dxx = spec.bc.mask(xs)
    g, gx = spec.bc.lift(xs, t)
    u = d * n + g
    ux = dx * n + d * nx + gx
    uxx = dxx * n + 2 * dx * nx + d * nxx
    shape = torch.as_tensor(x).shape
    return u.reshape(shape), ux.reshape(shape), uxx.reshape(shape)


def param_jacobian(q: torch.Tensor, spec: AnsatzSpec, xs: torch.Tensor, t: float = 0.0) -> torch.Tensor:
    """Jacobian ``J[i, j] = d u(x_i) / d q_j`` of shape ``(len(xs), N_P)``, by reverse-mode accumulation."""
    points = _as_points(xs)
    return torch.func.jacrev(lambda p: eval_u(p, spec, points, t))(q)


class _FullBatch(IterableDataset):
    """Yields the complete sample set forever; the trainer's ``max_steps`` bounds the loop."""

    def __init__(self, x: torch.Tensor, y: torch.Tensor) -> None:
        super().__init__()
        self.x, self.y = x, y

    def __iter__(self):  # type: ignore[no-untyped-def]
        while True:
            yield self.x, self.y


class InitialFitModule(pl.LightningModule):
    """Least-squares fit of the ansatz to samples of the initial condition.

    Tracks the best-seen parameters (the loss of a step is paired with the parameters it was evaluated at) and
    requests a stop once the tolerance is reached or the loss turns non-finite.
    """

    def __init__(self, spec: AnsatzSpec, q0: torch.Tensor, opt: OptimizerConfig) -> None:
        super().__init__()
        self.spec = spec
        self.opt = opt
        self.q = torch.nn.Parameter(q0.detach().clone())
        self.best_mse = math.inf
        self.best_q = q0.detach().clone()
        self.nonfinite_step: Optional[int] = None

    def mse(self, q: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return torch.mean((eval_u(q, self.spec, x) - y) ** 2)

    def training_step(self, batch: Tuple[torch.Tensor, torch.Tensor], batch_idx: int) -> Optional[torch.Tensor]:
        loss = self.mse(self.q, *batch)
        value = loss.item()
        if not math.isfinite(value):
            self.nonfinite_step = self.global_step
            self.trainer.should_stop = True
            return None
        if value < self.best_mse:
            self.best_mse, self.best_q = value, self.q.detach().clone()
        if self.best_mse <= self.opt.tolerance:
            self.trainer.should_stop = True
        if batch_idx % 10000 == 0:
            rank_zero_debug(f"initial fit step {batch_idx}: mse={value:.3e}")
        return loss

    def configure_optimizers(self) -> torch.optim.Optimizer:
        return torch.optim.Adam([self.q], lr=self.opt.lr, betas=(self.opt.beta1, self.opt.beta2))


def fit_initial(
    spec: AnsatzSpec,
    u0_samples: Tuple[torch.Tensor, torch.Tensor],
    opt: OptimizerConfig,
    q_init: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, float]:
    """Fit the ansatz at ``t = 0`` to samples ``(x_i, u_0(x_i))`` by minimizing the mean squared misfit with Adam.

    Args:
        spec: Network architecture.
        u0_samples: Sample points and target values.
        opt: Optimizer settings.
        q_init: Starting parameters; Xavier initialization from ``spec.seed`` when omitted.

    Returns:
        The best-seen parameters and their mean squared misfit.

    Raises:
        NumericalError: If the loss becomes non-finite; ``q_last`` holds the best finite iterate.
    """
    x, y = (torch.as_tensor(v, dtype=DTYPE).reshape(-1) for v in u0_samples)
    if x.numel() < spec.num_params / 2:
        rank_zero_warn(
            f"Only {x.numel()} initial-condition samples for {spec.num_params} parameters; at least "
            f"{math.ceil(spec.num_params / 2)} are recommended."
        )
    q0 = init_xavier(spec) if q_init is None else q_init.detach().clone()
    module = InitialFitModule(spec, q0, opt)
    with torch.no_grad():
        init_mse = module.mse(q0, x, y).item()
    if not math.isfinite(init_mse):
        raise NumericalError("Initial-fit loss is non-finite at the starting parameters.", q_last=q0)
    module.best_mse, module.best_q = init_mse, q0.clone()
    if init_mse <= opt.tolerance or opt.iterations <= 0:
        return q0, init_mse

    pl.seed_everything(spec.seed)
    trainer = pl.Trainer(
        max_steps=opt.iterations,
        accelerator="cpu",
        devices=1,
        precision="64-true",
        logger=False,
        enable_checkpointing=False,
        enable_progress_bar=False,
        enable_model_summary=False,
        num_sanity_val_steps=0,
    )
    trainer.fit(module, train_dataloaders=DataLoader(_FullBatch(x, y), batch_size=None))
    if module.nonfinite_step is not None:
        raise NumericalError(
            f"Initial-fit loss became non-finite at step {module.nonfinite_step}.", q_last=module.best_q
        )
    with torch.no_grad():
        final_q = module.q.detach().clone()
        final_mse = module.mse(final_q, x, y).item()
    if math.isfinite(final_mse) and final_mse < module.best_mse:
        module.best_mse, module.best_q = final_mse, final_q
    rank_zero_info(f"Initial fit finished after {trainer.global_step} Adam steps with mse={module.best_mse:.3e}.")
    return module.best_q, module.best_mse


def save_params(path: Union[str, Path], q: torch.Tensor, spec: AnsatzSpec, **meta: Any) -> Path:
    """Write ``q`` as one value per line, preceded by a JSON header describing ``spec``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({**spec.describe(), **meta}, sort_keys=True)
    np.savetxt(path, q.detach().cpu().numpy(), fmt="%.17g", header=header, comments="# ")
    return path


def load_params(path: Union[str, Path]) -> Tuple[torch.Tensor, Dict[str, Any]]:
    """Read a parameter checkpoint written by :func:`save_params`.

    Raises:
        MisconfigurationException: If the file layout version is not supported.
    """
    path = Path(path)
    with open(path) as fp:
        meta = json.loads(fp.readline()[1:].strip())
    if meta.get("layout_version") != PARAM_LAYOUT_VERSION:
        raise MisconfigurationException(f"Unsupported parameter layout version in '{path}': {meta}.")
    values = np.loadtxt(path, comments="#", ndmin=1)
    return torch.as_tensor(values, dtype=DTYPE), meta

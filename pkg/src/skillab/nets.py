"""Function approximators: MLPs, the orthogonal expert mixture, and a
finite-difference gradient checker.

Networks take a dtype at construction: float64 (the default) for numerics
work and gradient checking, float32 for the training hot path.  All weight
init draws from an explicit torch.Generator so networks are
bit-reproducible from a seed regardless of global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from skillab.core import ConfigError, NumericError

DTYPE = torch.float64

_ACTIVATIONS = {"elu": nn.ELU, "relu": nn.ReLU, "tanh": nn.Tanh}

GS_EPS = 1e-8
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a plain MLP; hidden layers default to the shared trunk size
    used by policy, value and discriminator networks."""

    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (256, 256, 128)
    activation: str = "elu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError(f"non-positive dims in {self}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"non-positive hidden dim in {self.hidden_dims}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.activation!r}; "
                f"choose from {sorted(_ACTIVATIONS)}"
            )
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))


@dataclass(frozen=True)
class OmoeSpec:
    """Shape of the expert-mixture policy body.

    ``num_experts`` feature extractors map the input to ``feature_dim``
    vectors; orthogonalization needs the ambient dimension to be at least
    the number of experts.  With ``orthogonalize`` off this is a plain
    mixture of experts.
    """

    input_dim: int
    action_dim: int
    num_experts: int = 6
    expert_hidden_dims: tuple[int, ...] = (64, 64)
    feature_dim: int = 64
    gate_hidden_dims: tuple[int, ...] = (64, 64)
    orthogonalize: bool = True
    unit_normalize: bool = False
    activation: str = "elu"

    def __post_init__(self):
        if self.num_experts < 1:
            raise ConfigError(f"num_experts must be >= 1, got {self.num_experts}")
        if self.feature_dim < self.num_experts:
            raise ConfigError(
                f"feature_dim ({self.feature_dim}) must be >= num_experts "
                f"({self.num_experts}) for orthogonalization"
            )
        object.__setattr__(self, "expert_hidden_dims", tuple(self.expert_hidden_dims))
        object.__setattr__(self, "gate_hidden_dims", tuple(self.gate_hidden_dims))


def init_linear(layer: nn.Linear, generator: torch.Generator) -> nn.Linear:
    """Torch's default Linear init (U(-1/sqrt(fan_in), ...)) from an
    explicit generator."""
    fan_in = layer.weight.shape[1]
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=generator)
    return layer


_FUNCTIONAL_ACTIVATIONS = {
    "elu": torch.nn.functional.elu,
    "relu": torch.nn.functional.relu,
    "tanh": torch.tanh,
}


class Mlp(nn.Module):
    """Affine-activation stack per an MlpSpec; final layer is linear.

    The forward pass calls F.linear directly instead of dispatching
    through nn.Sequential; per-module overhead matters at desk-scale batch
    sizes.
    """

    def __init__(self, spec: MlpSpec, generator: torch.Generator, dtype=DTYPE):
        super().__init__()
        self.spec = spec
        act = _ACTIVATIONS[spec.activation]
        layers = []
        prev = spec.input_dim
        for h in spec.hidden_dims:
            layers.append(init_linear(nn.Linear(prev, h, dtype=dtype), generator))
            layers.append(act())
            prev = h
        layers.append(init_linear(nn.Linear(prev, spec.output_dim, dtype=dtype), generator))
        self.net = nn.Sequential(*layers)
        self._linears = [m for m in self.net if isinstance(m, nn.Linear)]
        self._act = _FUNCTIONAL_ACTIVATIONS[spec.activation]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.input_dim:
            raise ConfigError(
                f"input dim {x.shape[-1]} != spec input_dim {self.spec.input_dim}"
            )
        last = len(self._linears) - 1
        for i, lin in enumerate(self._linears):
            x = torch.nn.functional.linear(x, lin.weight, lin.bias)
            if i < last:
                x = self._act(x)
        return x


def gram_schmidt(
    u: torch.Tensor, eps: float = GS_EPS, unit_normalize: bool = False
) -> torch.Tensor:
    """Classical Gram-Schmidt over the second-to-last dimension.

    ``u`` holds row vectors u_1..u_n in its last two dimensions (leading
    batch dimensions broadcast).  Row i of the output is

        v_i = u_i - sum_{j<i} <v_j, u_i> / (<v_j, v_j> + eps) * v_j.

    Rows are not rescaled unless ``unit_normalize``; the stabilizer keeps
    degenerate (parallel) rows from dividing by zero, collapsing them to
    ~0 instead.  The whole computation is differentiable.
    """
    if not torch.isfinite(u).all():
        raise NumericError("non-finite input to gram_schmidt")
    rows = []
    n = u.shape[-2]
    for i in range(n):
        u_i = u[..., i, :]
        v_i = u_i
        for j in range(i):
            v_j = rows[j]
            coef = (v_j * u_i).sum(-1, keepdim=True) / (
                (v_j * v_j).sum(-1, keepdim=True) + eps
            )
            v_i = v_i - coef * v_j
        rows.append(v_i)
    v = torch.stack(rows, dim=-2)
    if unit_normalize:
        v = v / (v.norm(dim=-1, keepdim=True) + eps)
    return v


class OmoeBody(nn.Module):
    """Expert bank -> orthogonalization -> gated sum -> shared linear head.

    The forward path is exactly expert features, Gram-Schmidt (when
    enabled), softmax gating, weighted feature sum, output head, in that
    order.
    """

    def __init__(self, spec: OmoeSpec, generator: torch.Generator, dtype=DTYPE):
        super().__init__()
        self.spec = spec
        self.experts = nn.ModuleList(
            Mlp(
                MlpSpec(
                    spec.input_dim,
                    spec.feature_dim,
                    spec.expert_hidden_dims,
                    spec.activation,
                ),
                generator,
                dtype,
            )
            for _ in range(spec.num_experts)
        )
        self.gate = Mlp(
            MlpSpec(
                spec.input_dim, spec.num_experts, spec.gate_hidden_dims, spec.activation
            ),
            generator,
            dtype,
        )
        self.head = init_linear(
            nn.Linear(spec.feature_dim, spec.action_dim, dtype=dtype), generator
        )

    def expert_features(self, x: torch.Tensor) -> torch.Tensor:
        """Stacked expert outputs, shape (..., num_experts, feature_dim)."""
        return torch.stack([e(x) for e in self.experts], dim=-2)

    def gating(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax mixing weights over experts, shape (..., num_experts)."""
        return torch.softmax(self.gate(x), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = self.expert_features(x)
        v = (
            gram_schmidt(u, unit_normalize=self.spec.unit_normalize)
            if self.spec.orthogonalize
            else u
        )
        alpha = self.gating(x)
        mixed = (alpha.unsqueeze(-1) * v).sum(dim=-2)
        return self.head(mixed)


class MlpBody(nn.Module):
    """Plain MLP baseline policy body."""

    def __init__(self, spec: MlpSpec, generator: torch.Generator, dtype=DTYPE):
        super().__init__()
        self.spec = spec
        self.mlp = Mlp(spec, generator, dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(x)


class GaussianPolicy(nn.Module):
    """Diagonal Gaussian over actions: mean from the body, one learnable
    state-independent log-std per action dimension (init 0, clamped to
    [-5, 2])."""

    def __init__(self, body: nn.Module, action_dim: int, dtype=DTYPE):
        super().__init__()
        self.body = body
        self.log_std = nn.Parameter(torch.zeros(action_dim, dtype=dtype))

    def _std(self) -> torch.Tensor:
        return torch.exp(self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def mean_action(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)

    def act(self, x: torch.Tensor, generator: torch.Generator):
        """Sample actions and their log-probs (no grad; rollout use)."""
        with torch.no_grad():
            mean = self.body(x)
            std = self._std()
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            action = mean + std * noise
            log_prob = self._log_prob(mean, std, action)
        return action, log_prob

    def log_prob_and_entropy(self, x: torch.Tensor, action: torch.Tensor):
        mean = self.body(x)
        std = self._std()
        log_prob = self._log_prob(mean, std, action)
        entropy = (self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX) + 0.5 * (1.0 + math.log(2 * math.pi))).sum().expand(
            log_prob.shape
        )
        return log_prob, entropy

    @staticmethod
    def _log_prob(mean, std, action):
        z = (action - mean) / std
        return (-0.5 * z**2 - torch.log(std) - 0.5 * math.log(2 * math.pi)).sum(-1)


def make_policy_body(
    architecture: str,
    input_dim: int,
    action_dim: int,
    generator: torch.Generator,
    num_experts: int = 6,
    mlp_hidden_dims: tuple[int, ...] = (256, 256, 128),
    unit_normalize: bool = False,
    dtype=DTYPE,
) -> nn.Module:
    """Policy-body factory for the three compared architectures."""
    if architecture == "mlp":
        return MlpBody(MlpSpec(input_dim, action_dim, mlp_hidden_dims), generator, dtype)
    if architecture in ("moe", "omoe"):
        spec = OmoeSpec(
            input_dim,
            action_dim,
            num_experts=num_experts,
            orthogonalize=(architecture == "omoe"),
            unit_normalize=unit_normalize,
        )
        return OmoeBody(spec, generator, dtype)
    raise ConfigError(f"unknown architecture {architecture!r}")


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of one analytic-vs-central-difference comparison."""

    name: str
    max_rel_error: float
    max_abs_error: float
    grad_scale: float
    num_coords: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol

    def line(self, tol: float) -> str:
        status = "ok" if self.passed(tol) else "FAIL"
        return (
            f"{status:4s} {self.name}: max rel err {self.max_rel_error:.3e} "
            f"(abs {self.max_abs_error:.3e}, {self.num_coords} coords, tol {tol:.1e})"
        )


def grad_check(
    f, wrt: list[torch.Tensor], h: float = 1e-5, name: str = "f"
) -> GradCheckReport:
    """Compare autograd gradients of a scalar-valued thunk against central
    finite differences.

    ``f`` takes no arguments and must be a deterministic function of the
    tensors in ``wrt`` (all float64, requires_grad).  The relative error is
    measured against the largest gradient magnitude so near-zero components
    do not dominate.
    """
    for t in wrt:
        if t.dtype != DTYPE:
            raise ConfigError("grad_check requires float64 tensors")
        t.requires_grad_(True)
    y = f()
    if y.numel() != 1:
        raise ConfigError("grad_check expects a scalar-valued function")
    if not torch.isfinite(y):
        raise NumericError("non-finite function value in grad_check")
    analytic = torch.autograd.grad(y, wrt, allow_unused=False)

    max_abs = 0.0
    scale = max((g.abs().max().item() for g in analytic), default=0.0)
    num_coords = 0
    with torch.no_grad():
        for t, g in zip(wrt, analytic):
            flat = t.view(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                y_plus = f().item()
                flat[i] = orig - h
                y_minus = f().item()
                flat[i] = orig
                if not (math.isfinite(y_plus) and math.isfinite(y_minus)):
                    raise NumericError("non-finite evaluation in grad_check")
                numeric = (y_plus - y_minus) / (2 * h)
                scale = max(scale, abs(numeric))
                max_abs = max(max_abs, abs(gflat[i].item() - numeric))
                num_coords += 1
    rel = max_abs / max(scale, 1e-12)
    return GradCheckReport(name, rel, max_abs, scale, num_coords)

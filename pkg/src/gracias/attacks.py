"""L-infinity white-box and adaptive attacks.

All attacks are untargeted and operate on a single image.  Adaptive attacks
take a defense transform ``f(x, rng)``; the defense randomness they simulate
comes from ``AttackConfig.seed`` and is unrelated to whatever seed the
evaluator later uses to defend the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .defense import Defense
from .model import ClassifierParams, loss_and_input_grad, predict
from .rng import Xoshiro256
from .tensor import as_tensor


@dataclass(frozen=True)
class AttackConfig:
    eps: float  # L-inf budget on the [0, 1] pixel scale
    eps_step: float
    iters: int = 1
    eot_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.eps < 0.0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if not 0.0 <= self.eps_step <= self.eps:
            raise ValueError(f"need 0 <= eps_step <= eps, got eps_step={self.eps_step}, eps={self.eps}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.eot_samples < 1:
            raise ValueError(f"eot_samples must be >= 1, got {self.eot_samples}")

    @classmethod
    def from_255(cls, eps: float, eps_step: float, **kw) -> "AttackConfig":
        """Build a config from budgets given on the 0-255 pixel scale."""
        return cls(eps=eps / 255.0, eps_step=eps_step / 255.0, **kw)


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray
    linf: float
    success: bool


def project_linf(x_adv, x_ref, eps: float) -> np.ndarray:
    """Clamp into the eps-ball around ``x_ref`` intersected with [0, 1]."""
    x_adv = as_tensor(x_adv, name="x_adv")
    x_ref = as_tensor(x_ref, name="x_ref")
    if x_adv.shape != x_ref.shape:
        raise ValueError(f"shape mismatch {x_adv.shape} vs {x_ref.shape}")
    return np.clip(np.clip(x_adv, x_ref - eps, x_ref + eps), 0.0, 1.0)


def _result(params: ClassifierParams, x: np.ndarray, x_adv: np.ndarray, y: int) -> AttackResult:
    return AttackResult(
        adversarial=x_adv,
        linf=float(np.max(np.abs(x_adv - x))) if x.size else 0.0,
        success=predict(params, x_adv) != y,
    )


def fgsm(params: ClassifierParams, x, y: int, eps: float) -> AttackResult:
    x = as_tensor(x, name="image")
    _, grad = loss_and_input_grad(params, x, y)
    x_adv = np.clip(x + eps * np.sign(grad), 0.0, 1.0)
    return _result(params, x, x_adv, y)


def _signed_ascent(params, x, y, config: AttackConfig, gradient) -> AttackResult:
    x = as_tensor(x, name="image")
    x_adv = x.copy()
    for _ in range(config.iters):
        x_adv = project_linf(x_adv + config.eps_step * np.sign(gradient(x_adv)), x, config.eps)
    return _result(params, x, x_adv, y)


def pgd(params: ClassifierParams, x, y: int, config: AttackConfig) -> AttackResult:
    return _signed_ascent(params, x, y, config, lambda z: loss_and_input_grad(params, z, y)[1])


def bpda_grad(params: ClassifierParams, defense: Defense, x, y: int, rng: Xoshiro256) -> np.ndarray:
    """Loss gradient at ``defense(x)``, passed back through the defense as identity."""
    _, grad = loss_and_input_grad(params, defense(x, rng), y)
    return grad


def bpda_attack(params: ClassifierParams, defense: Defense, x, y: int, config: AttackConfig) -> AttackResult:
    rng = Xoshiro256(config.seed)
    return _signed_ascent(params, x, y, config, lambda z: bpda_grad(params, defense, z, y, rng))


def eot_grad(params: ClassifierParams, defense: Defense, x, y: int, n: int, rng: Xoshiro256) -> np.ndarray:
    """Mean BPDA gradient over ``n`` fresh draws of the defense."""
    if n < 1:
        raise ValueError(f"need at least one EOT sample, got {n}")
    x = as_tensor(x, name="image")
    total = np.zeros_like(x)
    for _ in range(n):
        total += bpda_grad(params, defense, x, y, rng)
    return total / n


def eot_pgd(params: ClassifierParams, defense: Defense, x, y: int, config: AttackConfig) -> AttackResult:
    rng = Xoshiro256(config.seed)
    return _signed_ascent(
        params, x, y, config, lambda z: eot_grad(params, defense, z, y, config.eot_samples, rng)
    )

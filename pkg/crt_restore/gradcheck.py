"""Finite-difference gradient checks and the named check suites."""

from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass
import logging
from typing import Any

import numpy as np

from .autodiff import Array, Tensor, apply, no_grad, precision
from .config import LossWeights, get_profile
from .const import PROFILE_TOY
from .imaging import ssim_tensor
from .losses import discriminator_loss, generator_loss
from .model import DISC, GEN, ParameterSet, init_params
from .rng import Rng

_LOGGER = logging.getLogger(__name__)

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
# Floor of the relative-error denominator
REL_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckResult:
    """Worst relative error between reverse-mode and finite-difference gradients."""

    name: str
    error: float
    index: tuple[int, ...] | None
    checked: int
    tolerance: float
    non_finite: bool = False

    @property
    def passed(self) -> bool:
        """Return True when every component is finite and within tolerance."""
        return not self.non_finite and self.error < self.tolerance

    def describe(self) -> str:
        """Return a one-line summary."""
        status = "ok" if self.passed else "FAIL"
        where = f" at {self.index}" if self.index is not None else ""
        if self.non_finite:
            return f"{self.name}: {status} (non-finite gradient{where})"
        return (
            f"{self.name}: {status} max rel error {self.error:.3e}{where}"
            f" over {self.checked} components"
        )


def grad_check(
    fn: Callable[[Tensor], Tensor],
    point: Any,
    eps: float = 1e-6,
    *,
    name: str = "function",
    tolerance: float = OP_TOLERANCE,
    max_checks: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare the gradient of a scalar function with central differences.

    Runs in double precision. Each checked component contributes
    |a - n| / max(|a|, |n|, 1e-8); max_checks limits the comparison to a
    seeded random subset of components.

    Raises:
        ValueError: eps outside [1e-6, 1e-2]
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-6, 1e-2], got {eps}")
    with precision(np.float64):
        base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
        x = Tensor(base.copy(), requires_grad=True)
        fn(x).backward()
        analytic = x.grad if x.grad is not None else np.zeros_like(base)

        flat_count = base.size
        if max_checks is not None and max_checks < flat_count:
            picks = Rng(seed, "gradcheck", name).sorted_sample(flat_count, max_checks)
        else:
            picks = list(range(flat_count))

        worst, worst_index = 0.0, None
        with no_grad():
            for flat in picks:
                index = np.unravel_index(flat, base.shape)
                plus, minus = base.copy(), base.copy()
                plus[index] += eps
                minus[index] -= eps
                numeric = (fn(Tensor(plus)).item() - fn(Tensor(minus)).item()) / (2.0 * eps)
                a = float(analytic[index])
                if not (np.isfinite(a) and np.isfinite(numeric)):
                    return GradCheckResult(
                        name,
                        float("inf"),
                        tuple(int(i) for i in index),
                        len(picks),
                        tolerance,
                        True,
                    )
                rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
                if rel >= worst:
                    worst, worst_index = rel, tuple(int(i) for i in index)
    return GradCheckResult(name, worst, worst_index, len(picks), tolerance)


def _weighted_sum(out: Tensor, rng: Rng) -> Tensor:
    weights = rng.split("weights").random(out.shape, 0.5, 1.5)
    return (out * out.constant(weights)).sum()


def _op_cases(rng: Rng) -> dict[str, tuple[Callable[..., Tensor], list[Array]]]:
    """Return op-kind -> (function of operands, operand values)."""

    def normal(*shape: int, label: str = "x") -> Array:
        return rng.split(label, *shape).normal(1.0, shape)

    def away_from_zero(*shape: int, label: str) -> Array:
        values = normal(*shape, label=label)
        return np.sign(values) * (0.2 + np.abs(values))

    mask = np.zeros((3, 4), dtype=bool)
    mask[0, 1] = mask[2, 3] = True
    return {
        "add": (lambda a, b: apply("add", a, b), [normal(2, 3, 4), normal(3, 4, label="b")]),
        "sub": (lambda a, b: apply("sub", a, b), [normal(2, 3, 4), normal(1, 4, label="b")]),
        "mul": (lambda a, b: apply("mul", a, b), [normal(2, 3, 4), normal(3, 1, label="b")]),
        "div": (
            lambda a, b: apply("div", a, b),
            [normal(2, 3), 1.0 + np.abs(normal(2, 3, label="b"))],
        ),
        "scalar-multiply": (lambda a: apply("scalar-multiply", a, scalar=-1.7), [normal(3, 4)]),
        "neg": (lambda a: apply("neg", a), [normal(3, 4)]),
        "matmul": (lambda a, b: apply("matmul", a, b), [normal(2, 3, 4), normal(4, 5, label="b")]),
        "permute": (lambda a: apply("permute", a, axes=(2, 0, 1)), [normal(2, 3, 4)]),
        "transpose": (lambda a: apply("transpose", a, axes=(0, 2, 1)), [normal(2, 3, 4)]),
        "reshape": (lambda a: apply("reshape", a, shape=(4, 6)), [normal(2, 3, 4)]),
        "concat": (
            lambda a, b: apply("concat", a, b, axis=1),
            [normal(2, 3), normal(2, 2, label="b")],
        ),
        "slice": (lambda a: a[1:, ::2], [normal(3, 5)]),
        "sum": (lambda a: apply("sum", a, axis=1, keepdims=True), [normal(2, 3, 4)]),
        "mean": (lambda a: apply("mean", a, axis=(0, 2)), [normal(2, 3, 4)]),
        "softmax": (lambda a: apply("softmax", a), [normal(3, 5)]),
        "layer-norm": (
            lambda x, s, b: apply("layer-norm", x, s, b),
            [normal(3, 6), normal(6, label="s"), normal(6, label="b")],
        ),
        "gelu": (lambda a: apply("gelu", a), [normal(3, 4)]),
        "sigmoid": (lambda a: apply("sigmoid", a), [normal(3, 4)]),
        "log": (lambda a: apply("log", a), [0.5 + np.abs(normal(3, 4))]),
        "exp": (lambda a: apply("exp", a), [normal(3, 4)]),
        "abs": (lambda a: apply("abs", a), [away_from_zero(3, 4, label="abs")]),
        "masked-fill": (lambda a: apply("masked-fill", a, mask=mask, value=-3.0), [normal(3, 4)]),
        "correlate2d": (
            lambda a: apply("correlate2d", a, kernel=np.abs(normal(3, 3, label="k"))),
            [normal(2, 6, 7, 3)],
        ),
    }


def _operand_fn(
    op: Callable[..., Tensor], operands: list[Array], position: int, rng: Rng
) -> Callable[[Tensor], Tensor]:
    def f(x: Tensor) -> Tensor:
        args = [x if i == position else Tensor(v) for i, v in enumerate(operands)]
        return _weighted_sum(op(*args), rng)

    return f


def op_suite(seed: int = 0) -> list[GradCheckResult]:
    """Check every op-kind, one operand at a time."""
    rng = Rng(seed, "ops")
    results = []
    for kind, (op, operands) in _op_cases(rng).items():
        for position in range(len(operands)):
            f = _operand_fn(op, operands, position, rng.split(kind))
            results.append(
                grad_check(
                    f, operands[position], name=f"{kind}[{position}]", tolerance=OP_TOLERANCE
                )
            )
    return results


def mlp_suite(seed: int = 0) -> list[GradCheckResult]:
    """Mean-squared error of a two-layer perceptron at a random 16-dim point."""
    rng = Rng(seed, "mlp")
    w1, b1 = rng.normal(0.3, (16, 8)), rng.normal(0.1, (8,))
    w2, b2 = rng.normal(0.3, (8, 4)), rng.normal(0.1, (4,))
    target = rng.normal(1.0, (4,))

    def f(x: Tensor) -> Tensor:
        hidden = (x @ Tensor(w1) + Tensor(b1)).gelu()
        err = hidden @ Tensor(w2) + Tensor(b2) - Tensor(target)
        return (err * err).mean()

    point = rng.split("point").normal(1.0, (1, 16))
    return [grad_check(f, point, name="mlp-mse", tolerance=OP_TOLERANCE)]


def ssim_suite(seed: int = 0, side: int = 16) -> list[GradCheckResult]:
    """1 - SSIM between two random images, differentiated w.r.t. the first."""
    rng = Rng(seed, "ssim")
    a = rng.split("a").random((side, side, 3))
    b = rng.split("b").random((side, side, 3))

    def f(x: Tensor) -> Tensor:
        return 1.0 - ssim_tensor(x, Tensor(b))

    return [grad_check(f, a, name="ssim-loss", tolerance=MODEL_TOLERANCE, max_checks=64)]


def _with_param(params: ParameterSet, name: str, value: Tensor) -> ParameterSet:
    tensors = {n: (value if n == name else Tensor(t.data)) for n, t in params.items()}
    return ParameterSet(params.config, tensors)


def _toy_setup(seed: int) -> tuple[ParameterSet, Array, Array]:
    config = get_profile(PROFILE_TOY).model
    with precision(np.float64):
        params = init_params(config, seed, dtype=np.float64)
    rng = Rng(seed, "toy-images")
    side = config.image_size
    clean = rng.split("clean").random((2, side, side, 3), 0.2, 0.8)
    corrupted = np.clip(clean + rng.split("noise").normal(0.1, clean.shape), 0.0, 1.0)
    return params, clean, corrupted


GENERATOR_PARAMS = (
    f"{GEN}.spt.proj.weight",
    f"{GEN}.blocks.0.attn.q.weight",
    f"{GEN}.blocks.0.attn.tau",
    f"{GEN}.blocks.1.mlp.fc2.weight",
    f"{GEN}.head.bias",
)
DISCRIMINATOR_PARAMS = (
    f"{DISC}.embed.weight",
    f"{DISC}.blocks.0.attn.k.weight",
    f"{DISC}.blocks.0.attn.tau",
    f"{DISC}.head.fc1.weight",
    f"{DISC}.head.fc2.bias",
)


def generator_suite(seed: int = 0, max_checks: int = 8) -> list[GradCheckResult]:
    """Full composite generator loss on the toy config, per parameter tensor."""
    params, clean, corrupted = _toy_setup(seed)
    weights = LossWeights()
    results = []
    for name in GENERATOR_PARAMS:

        def f(x: Tensor, name: str = name) -> Tensor:
            return generator_loss(clean, corrupted, _with_param(params, name, x), weights).total

        results.append(
            grad_check(
                f,
                params[name].data,
                1e-5,
                name=f"generator-loss:{name}",
                tolerance=MODEL_TOLERANCE,
                max_checks=max_checks,
                seed=seed,
            )
        )
    return results


def discriminator_suite(seed: int = 0, max_checks: int = 8) -> list[GradCheckResult]:
    """Discriminator cross-entropy on the toy config, per parameter tensor."""
    params, clean, corrupted = _toy_setup(seed)
    results = []
    for name in DISCRIMINATOR_PARAMS:

        def f(x: Tensor, name: str = name) -> Tensor:
            loss, _ = discriminator_loss(clean, corrupted, _with_param(params, name, x))
            return loss

        results.append(
            grad_check(
                f,
                params[name].data,
                1e-5,
                name=f"discriminator-loss:{name}",
                tolerance=MODEL_TOLERANCE,
                max_checks=max_checks,
                seed=seed,
            )
        )
    return results


SUITES: dict[str, Callable[[int], list[GradCheckResult]]] = {
    "ops": op_suite,
    "mlp": mlp_suite,
    "ssim": ssim_suite,
    "generator": generator_suite,
    "discriminator": discriminator_suite,
}


def run_suites(names: Iterable[str] | None = None, seed: int = 0) -> list[GradCheckResult]:
    """Run the named suites (all by default) and log each result."""
    results = []
    for suite in names or SUITES:
        if suite not in SUITES:
            raise KeyError(f"unknown gradient-check suite {suite!r}")
        for result in SUITES[suite](seed):
            log = _LOGGER.info if result.passed else _LOGGER.error
            log("%s", result.describe())
            results.append(result)
    return results

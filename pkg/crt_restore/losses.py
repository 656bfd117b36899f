"""Composite generator objective and discriminator cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any

import numpy as np

from .autodiff import Tensor
from .config import LossWeights
from .const import ADV_MINIMAX, ADV_NON_SATURATING
from .exceptions import DataError, NumericalError
from .imaging import ssim_tensor
from .model import ParameterSet, discriminator_forward, generator_forward

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorLoss:
    """Differentiable total plus unweighted components for logging."""

    total: Tensor
    l1: float
    ssim: float
    adv: float
    restored: Tensor

    def components(self) -> dict[str, float]:
        """Return the loss breakdown."""
        return {"total": self.total.item(), "l1": self.l1, "ssim": self.ssim, "adv": self.adv}


def _as_tensor(x: Any, like: Tensor | None = None, dtype: Any = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        dtype = like.dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(what: str, components: dict[str, float]) -> None:
    if not all(math.isfinite(v) for v in components.values()):
        raise NumericalError(f"non-finite {what}", dict(components))


def adversarial_term(validity: Tensor, mode: str = ADV_NON_SATURATING) -> Tensor:
    """Generator adversarial term from D(G(x')).

    non-saturating: mean(-log D); minimax: mean(log(1 - D)).
    """
    if mode == ADV_NON_SATURATING:
        return -(validity.log().mean())
    if mode == ADV_MINIMAX:
        return (1.0 - validity).log().mean()
    raise ValueError(f"unknown adversarial mode {mode!r}")


def composite_loss(
    clean: Tensor,
    restored: Tensor,
    validity: Tensor,
    weights: LossWeights,
    mode: str = ADV_NON_SATURATING,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum l1 * mean|x - x_hat| + ssim * (1 - SSIM) + adv * adversarial."""
    if clean.shape != restored.shape:
        raise DataError(f"loss: clean {clean.shape} and restored {restored.shape} differ")
    l1 = (clean - restored).abs().mean()
    ssim_loss = 1.0 - ssim_tensor(clean, restored)
    adv = adversarial_term(validity, mode)
    total = l1 * weights.l1 + ssim_loss * weights.ssim + adv * weights.adv
    components = {
        "total": total.item(),
        "l1": l1.item(),
        "ssim": ssim_loss.item(),
        "adv": adv.item(),
    }
    return total, components


def generator_loss(
    clean: Any,
    corrupted: Any,
    params: ParameterSet,
    weights: LossWeights,
    mode: str = ADV_NON_SATURATING,
) -> GeneratorLoss:
    """Run G on corrupted inputs, score with D, and combine the three terms.

    Raises:
        NumericalError: A component is not finite; details hold the breakdown
    """
    x = _as_tensor(clean, dtype=params.dtype)
    restored = generator_forward(params, corrupted)
    x = x if x.ndim == restored.ndim else x.reshape(*restored.shape)
    validity = discriminator_forward(params, restored)
    total, components = composite_loss(x, restored, validity, weights, mode)
    _check_finite("generator loss", components)
    return GeneratorLoss(
        total=total,
        l1=components["l1"],
        ssim=components["ssim"],
        adv=components["adv"],
        restored=restored,
    )


def discriminator_loss(
    clean: Any, restored: Any, params: ParameterSet
) -> tuple[Tensor, dict[str, float]]:
    """Binary cross-entropy -[log D(x) + log(1 - D(x_hat))], batch mean.

    restored is detached here, so no gradient can reach the generator.
    """
    fake = restored.detach() if isinstance(restored, Tensor) else restored
    real_score = discriminator_forward(params, clean)
    fake_score = discriminator_forward(params, fake)
    loss = -(real_score.log().mean() + (1.0 - fake_score).log().mean())
    components = {
        "d_loss": loss.item(),
        "d_real": float(np.mean(real_score.data)),
        "d_fake": float(np.mean(fake_score.data)),
    }
    _check_finite("discriminator loss", components)
    return loss, components

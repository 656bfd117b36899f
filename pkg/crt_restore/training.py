"""Adversarial training loop for the restoration generator."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import logging
from pathlib import Path
import time
from typing import IO, Any

import orjson

from .autodiff import no_grad
from .checkpoint import save_checkpoint
from .config import LossWeights, RunConfig, TrainConfig
from .const import (
    BEST_CHECKPOINT,
    DIAGNOSTICS_FILE,
    HISTORY_FILE,
    LAST_CHECKPOINT,
    SPLIT_TRAIN,
    SPLIT_VAL,
)
from .dataset import Batch, Manifest, batch_iterator
from .diagnostics import run_diagnostics, write_diagnostics
from .evaluation import check_compatible, evaluate_params
from .exceptions import DataError, NumericalError
from .helpers import stable_hash64
from .losses import discriminator_loss, generator_loss
from .model import (
    DISC,
    GEN,
    ModelConfig,
    ParameterSet,
    clamp_temperatures,
    generator_forward,
    init_params,
)
from .optim import AdamState, GradientAccumulator, adam_step

_LOGGER = logging.getLogger(__name__)

# Keys excluded when comparing two runs for determinism
TIMING_KEYS = frozenset({"seconds"})


@dataclass
class TrainHistory:
    """Per-micro-batch loss records and per-epoch validation records."""

    steps: list[dict[str, Any]] = field(default_factory=list)
    epochs: list[dict[str, Any]] = field(default_factory=list)

    def records(self) -> list[dict[str, Any]]:
        """Return every record in the order it was logged."""
        merged = [*self.steps, *self.epochs]
        return sorted(merged, key=lambda r: (r["micro_step"], r["record"] == "epoch"))

    def series(self, key: str) -> list[float]:
        """Return one loss component over all step records."""
        return [float(r[key]) for r in self.steps]

    def without_timing(self) -> dict[str, list[dict[str, Any]]]:
        """Return the history with wall-clock fields dropped."""
        return {
            "steps": self.steps,
            "epochs": [{k: v for k, v in r.items() if k not in TIMING_KEYS} for r in self.epochs],
        }

    @classmethod
    def load(cls, path: str | Path) -> TrainHistory:
        """Read a history.jsonl file."""
        history = cls()
        for line in Path(path).read_bytes().splitlines():
            if not line.strip():
                continue
            record = orjson.loads(line)
            (history.epochs if record["record"] == "epoch" else history.steps).append(record)
        return history


@dataclass
class TrainResult:
    """Outcome of a training run."""

    params: ParameterSet
    history: TrainHistory
    last_checkpoint: Path
    best_checkpoint: Path
    optimizers: dict[str, AdamState]


class _HistoryLog:
    """Append-only history.jsonl writer."""

    def __init__(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path
        self._fh: IO[bytes] = path.open("wb")

    def write(self, record: Mapping[str, Any]) -> None:
        self._fh.write(orjson.dumps(record, option=orjson.OPT_SORT_KEYS) + b"\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class Trainer:
    """One training run: parameters, optimizer states and the step counters."""

    def __init__(
        self,
        manifest: Manifest,
        model_config: ModelConfig,
        train_config: TrainConfig,
        weights: LossWeights,
        out_dir: str | Path,
        params: ParameterSet | None = None,
    ) -> None:
        """Initialize parameters and optimizer states from the seeds."""
        self.manifest = manifest
        self.model_config = model_config
        self.config = train_config
        self.weights = weights
        self.out_dir = Path(out_dir)
        self.params = params or init_params(model_config, train_config.seed)
        if self.params.config != model_config:
            raise DataError("initial parameters were built for another model config")
        self.optimizers = {
            GEN: AdamState.create(self.params.generator),
            DISC: AdamState.create(self.params.discriminator),
        }
        self.accumulators = {
            GEN: GradientAccumulator(self.params.generator),
            DISC: GradientAccumulator(self.params.discriminator),
        }
        self.history = TrainHistory()
        self.micro_step = 0
        self.g_steps = 0
        self.d_steps = 0

    @property
    def done(self) -> bool:
        """Return True once the generator step cap is reached."""
        cap = self.config.max_steps
        return cap is not None and self.g_steps >= cap

    def apply_gradients(self, group: str) -> bool:
        """Step one group on its averaged accumulated gradients.

        Only applied updates count toward g_steps / d_steps; a step skipped on
        non-finite gradients still clears the accumulator.
        """
        acc = self.accumulators[group]
        if not acc.count:
            return False
        grads = acc.averaged()
        acc.reset()
        applied = adam_step(
            self.params.group(group), grads, self.optimizers[group], self.config.learning_rate
        )
        if not applied:
            _LOGGER.warning("Non-finite %s gradients at micro-step %d", group, self.micro_step)
            return False
        if group == GEN:
            self.g_steps += 1
        else:
            self.d_steps += 1
        clamp_temperatures(self.params, group)
        return True

    def discriminator_step(self, batch: Batch) -> dict[str, float]:
        """Accumulate discriminator gradients on one micro-batch.

        The generator runs without recording, so only D parameters receive
        gradients.
        """
        with no_grad():
            restored = generator_forward(self.params, batch.corrupted)
        loss, components = discriminator_loss(batch.clean, restored, self.params)
        loss.backward()
        acc = self.accumulators[DISC]
        acc.collect()
        if acc.count >= self.config.accumulation_steps:
            self.apply_gradients(DISC)
        return components

    def generator_step(self, batch: Batch) -> dict[str, float]:
        """Accumulate generator gradients on one micro-batch with D frozen."""
        self.params.set_trainable(DISC, False)
        try:
            result = generator_loss(
                batch.clean,
                batch.corrupted,
                self.params,
                self.weights,
                self.config.adversarial_mode,
            )
            result.total.backward()
        finally:
            self.params.set_trainable(DISC, True)
        acc = self.accumulators[GEN]
        acc.collect()
        if acc.count >= self.config.accumulation_steps:
            self.apply_gradients(GEN)
        return result.components()

    def train_batch(self, batch: Batch, epoch: int) -> dict[str, Any]:
        """Run the D phase then the G phase on one micro-batch."""
        d_parts: dict[str, float] = {}
        for _ in range(self.config.d_steps_per_g_step):
            d_parts = self.discriminator_step(batch)
        g_parts = self.generator_step(batch)
        self.micro_step += 1
        record = {
            "record": "step",
            "epoch": epoch,
            "micro_step": self.micro_step,
            "g_step": self.g_steps,
            "batch": batch.size,
            **g_parts,
            **d_parts,
        }
        self.history.steps.append(record)
        return record

    def flush(self) -> None:
        """Apply partially accumulated gradients at the end of an epoch."""
        self.apply_gradients(DISC)
        self.apply_gradients(GEN)

    def validate(self) -> dict[str, float | None]:
        """Return mean validation PSNR / SSIM of restored images, or None when val is empty."""
        if not self.manifest.split_pairs(SPLIT_VAL):
            return {"val_psnr": None, "val_ssim": None}
        report = evaluate_params(
            self.params,
            self.manifest,
            SPLIT_VAL,
            batch_size=self.config.batch_size,
            prefetch=self.config.prefetch,
        )
        overall = report.overall().means()
        return {"val_psnr": overall["restored_psnr"], "val_ssim": overall["restored_ssim"]}

    def checkpoint(self, name: str, meta: Mapping[str, Any]) -> Path:
        """Write parameters, both optimizer states and metadata."""
        return save_checkpoint(self.out_dir / name, self.params, self.optimizers, meta)


def train(
    manifest: Manifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    weights: LossWeights,
    out_dir: str | Path,
    *,
    params: ParameterSet | None = None,
) -> TrainResult:
    """Train generator and discriminator adversarially.

    Writes history.jsonl, last.crt and best.crt (highest validation PSNR;
    equal to last when the validation split is empty) under out_dir.

    Raises:
        DataError: Empty train split or images not matching the model size
        NumericalError: A non-finite loss; diagnostics.json is written first
    """
    out_dir = Path(out_dir)
    if not manifest.split_pairs(SPLIT_TRAIN):
        raise DataError(f"train split of {manifest.path} is empty")
    trainer = Trainer(manifest, model_config, train_config, weights, out_dir, params)
    check_compatible(trainer.params, manifest)
    log = _HistoryLog(out_dir / HISTORY_FILE)
    run_config = {
        **RunConfig(model=model_config, train=train_config, loss=weights).as_dict(),
        "dataset": str(manifest.root),
        "out_dir": str(out_dir),
    }
    best_psnr: float | None = None
    last_path = best_path = out_dir / LAST_CHECKPOINT
    _LOGGER.info(
        "Training %d generator / %d discriminator parameters on %d pairs",
        trainer.params.num_parameters(GEN),
        trainer.params.num_parameters(DISC),
        len(manifest.split_pairs(SPLIT_TRAIN)),
    )
    try:
        for epoch in range(train_config.epochs):
            started = time.perf_counter()
            epoch_seed = stable_hash64(train_config.seed, "epoch", epoch)
            for batch in batch_iterator(
                manifest,
                SPLIT_TRAIN,
                train_config.batch_size,
                epoch_seed,
                prefetch=train_config.prefetch,
            ):
                record = trainer.train_batch(batch, epoch)
                log.write(record)
                _LOGGER.debug(
                    "epoch %d step %d: l1 %.5f ssim %.5f adv %.5f d %.5f",
                    epoch,
                    record["micro_step"],
                    record["l1"],
                    record["ssim"],
                    record["adv"],
                    record["d_loss"],
                )
                if trainer.done:
                    break
            if not trainer.done:
                trainer.flush()
            metrics = trainer.validate()
            epoch_record = {
                "record": "epoch",
                "epoch": epoch,
                "micro_step": trainer.micro_step,
                "g_step": trainer.g_steps,
                "d_step": trainer.d_steps,
                "seconds": time.perf_counter() - started,
                **metrics,
            }
            trainer.history.epochs.append(epoch_record)
            log.write(epoch_record)
            _LOGGER.info(
                "Epoch %d/%d done: %d generator steps, val PSNR %s, val SSIM %s",
                epoch + 1,
                train_config.epochs,
                trainer.g_steps,
                metrics["val_psnr"],
                metrics["val_ssim"],
            )

            meta = {
                "epoch": epoch,
                "g_step": trainer.g_steps,
                "val_psnr": metrics["val_psnr"],
                "val_ssim": metrics["val_ssim"],
            }
            final = trainer.done or epoch == train_config.epochs - 1
            if final or (epoch + 1) % train_config.checkpoint_every == 0:
                last_path = trainer.checkpoint(LAST_CHECKPOINT, meta)
            val_psnr = metrics["val_psnr"]
            if val_psnr is not None and (best_psnr is None or val_psnr > best_psnr):
                best_psnr = val_psnr
                best_path = trainer.checkpoint(BEST_CHECKPOINT, meta)
            if trainer.done:
                _LOGGER.info("Reached max_steps=%d", train_config.max_steps)
                break
        if best_psnr is None:
            best_path = trainer.checkpoint(
                BEST_CHECKPOINT, {"epoch": None, "g_step": trainer.g_steps}
            )
    except NumericalError as err:
        _LOGGER.error("Training aborted at micro-step %d: %s", trainer.micro_step, err)
        summary = run_diagnostics(err, run_config, trainer.history.records(), trainer.params)
        write_diagnostics(out_dir / DIAGNOSTICS_FILE, summary)
        raise
    finally:
        log.close()
    return TrainResult(
        params=trainer.params,
        history=trainer.history,
        last_checkpoint=last_path,
        best_checkpoint=best_path,
        optimizers=trainer.optimizers,
    )

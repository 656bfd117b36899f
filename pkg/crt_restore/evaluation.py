"""Restoration-quality evaluation: PSNR / SSIM per corruption kind."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any

from atomicwrites import atomic_write
import orjson

from .checkpoint import Checkpoint, load_checkpoint
from .const import CORRUPTION_KINDS
from .dataset import Manifest, batch_iterator
from .exceptions import DataError
from .imaging import psnr, ssim
from .model import ParameterSet
from .restore import restore_batch

_LOGGER = logging.getLogger(__name__)

ALL_LABEL = "all"


@dataclass
class KindMetrics:
    """Running sums of the metric pairs for one corruption label."""

    count: int = 0
    corrupted_psnr: float = 0.0
    restored_psnr: float = 0.0
    corrupted_ssim: float = 0.0
    restored_ssim: float = 0.0

    def add(
        self,
        corrupted_psnr: float,
        restored_psnr: float,
        corrupted_ssim: float,
        restored_ssim: float,
    ) -> None:
        """Accumulate one pair."""
        self.count += 1
        self.corrupted_psnr += corrupted_psnr
        self.restored_psnr += restored_psnr
        self.corrupted_ssim += corrupted_ssim
        self.restored_ssim += restored_ssim

    def merge(self, other: KindMetrics) -> None:
        """Add another label's sums."""
        self.count += other.count
        self.corrupted_psnr += other.corrupted_psnr
        self.restored_psnr += other.restored_psnr
        self.corrupted_ssim += other.corrupted_ssim
        self.restored_ssim += other.restored_ssim

    def means(self) -> dict[str, float]:
        """Return mean metrics and restored-minus-corrupted deltas."""
        n = max(self.count, 1)
        row = {
            "corrupted_psnr": self.corrupted_psnr / n,
            "restored_psnr": self.restored_psnr / n,
            "corrupted_ssim": self.corrupted_ssim / n,
            "restored_ssim": self.restored_ssim / n,
        }
        row["delta_psnr"] = row["restored_psnr"] - row["corrupted_psnr"]
        row["delta_ssim"] = row["restored_ssim"] - row["corrupted_ssim"]
        return row


def _label_order(label: str) -> tuple[int, str]:
    kind = next((k for k in CORRUPTION_KINDS if label.startswith(k)), None)
    return (CORRUPTION_KINDS.index(kind) if kind else len(CORRUPTION_KINDS), label)


@dataclass
class EvalReport:
    """Per-label restoration metrics for one split."""

    split: str
    source: str
    kinds: dict[str, KindMetrics] = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        """Return labels in corruption-kind order."""
        return sorted(self.kinds, key=_label_order)

    def overall(self) -> KindMetrics:
        """Return the metrics pooled over every label."""
        total = KindMetrics()
        for metrics in self.kinds.values():
            total.merge(metrics)
        return total

    def rows(self) -> list[dict[str, Any]]:
        """Return one machine-readable record per label, then the pooled row."""
        columns = [(label, self.kinds[label]) for label in self.labels]
        columns.append((ALL_LABEL, self.overall()))
        return [
            {"split": self.split, "kind": label, "pairs": m.count, **m.means()}
            for label, m in columns
        ]

    def to_jsonl(self) -> bytes:
        """Serialize rows as sorted-key JSON lines."""
        return b"".join(
            orjson.dumps(row, option=orjson.OPT_SORT_KEYS) + b"\n" for row in self.rows()
        )

    def to_table(self) -> str:
        """Return an aligned text table: kinds as columns, metrics as rows."""
        rows = self.rows()
        header = ["metric", *(row["kind"] for row in rows)]
        lines = [["pairs", *(str(row["pairs"]) for row in rows)]]
        for key, fmt in (
            ("corrupted_psnr", "{:.2f}"),
            ("restored_psnr", "{:.2f}"),
            ("delta_psnr", "{:+.2f}"),
            ("corrupted_ssim", "{:.4f}"),
            ("restored_ssim", "{:.4f}"),
            ("delta_ssim", "{:+.4f}"),
        ):
            lines.append([key, *(fmt.format(row[key]) for row in rows)])
        table = [header, *lines]
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        rendered = [
            "  ".join(
                cell.ljust(w) if i == 0 else cell.rjust(w)
                for i, (cell, w) in enumerate(zip(r, widths, strict=True))
            ).rstrip()
            for r in table
        ]
        return "\n".join(rendered) + "\n"


def report_paths(report: str | Path) -> tuple[Path, Path]:
    """Return the (.jsonl, .txt) paths for a report base path."""
    base = Path(report)
    if base.suffix in (".jsonl", ".txt"):
        base = base.with_suffix("")
    return base.with_name(base.name + ".jsonl"), base.with_name(base.name + ".txt")


def write_report(report: EvalReport, path: str | Path) -> tuple[Path, Path]:
    """Publish the machine- and human-readable report atomically."""
    jsonl_path, txt_path = report_paths(path)
    jsonl_path.parent.mkdir(parents=True, exist_ok=True)
    with atomic_write(jsonl_path, mode="wb", overwrite=True) as fdesc:
        fdesc.write(report.to_jsonl())
    with atomic_write(txt_path, mode="w", overwrite=True, encoding="utf-8") as fdesc:
        fdesc.write(report.to_table())
    _LOGGER.info("Wrote report %s and %s", jsonl_path, txt_path)
    return jsonl_path, txt_path


def check_compatible(params: ParameterSet, manifest: Manifest) -> None:
    """Require every dataset image to match the model's image size.

    Raises:
        DataError: Some pair has another size
    """
    side = params.config.image_size
    bad = sorted(dims for dims in manifest.image_dims() if dims != (side, side))
    if bad:
        raise DataError(
            f"{manifest.path}: images of size {bad[0][0]}x{bad[0][1]} do not match"
            f" model image size {side}x{side}"
        )


def evaluate_params(
    params: ParameterSet,
    manifest: Manifest,
    split: str,
    *,
    batch_size: int = 8,
    prefetch: int = 0,
    source: str = "",
) -> EvalReport:
    """Score corrupted-vs-clean and restored-vs-clean for every pair of a split."""
    check_compatible(params, manifest)
    report = EvalReport(split=split, source=source)
    for batch in batch_iterator(manifest, split, batch_size, 0, prefetch=prefetch):
        restored = restore_batch(params, batch.corrupted)
        for i, label in enumerate(batch.labels):
            clean = batch.clean[i]
            report.kinds.setdefault(label, KindMetrics()).add(
                psnr(batch.corrupted[i], clean),
                psnr(restored[i], clean),
                ssim(batch.corrupted[i], clean),
                ssim(restored[i], clean),
            )
    return report


def evaluate(
    checkpoint: str | Path | Checkpoint,
    manifest: Manifest,
    split: str,
    *,
    batch_size: int = 8,
) -> EvalReport:
    """Evaluate a checkpoint on one split of a dataset.

    Raises:
        DataError: Empty split or checkpoint / dataset size mismatch
    """
    source = str(checkpoint) if not isinstance(checkpoint, Checkpoint) else "<memory>"
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    report = evaluate_params(
        checkpoint.params, manifest, split, batch_size=batch_size, source=source
    )
    overall = report.overall().means()
    _LOGGER.info(
        "Evaluated %d %s pairs: PSNR %.2f -> %.2f dB, SSIM %.4f -> %.4f",
        report.overall().count,
        split,
        overall["corrupted_psnr"],
        overall["restored_psnr"],
        overall["corrupted_ssim"],
        overall["restored_ssim"],
    )
    return report

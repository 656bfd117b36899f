"""Diagnostics dump for aborted training runs."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
import logging
from pathlib import Path
from typing import Any

from atomicwrites import atomic_write
import numpy as np
import orjson

from .exceptions import NumericalError
from .model import DISC, GEN, ParameterSet

_LOGGER = logging.getLogger(__name__)

TO_REDACT = {"dataset", "out_dir"}
REDACTED = "**REDACTED**"
# Most recent history records kept in a dump
HISTORY_TAIL = 10


def redact(data: Any, keys: set[str] = TO_REDACT) -> Any:
    """Return a copy of data with the values of the given keys replaced."""
    if isinstance(data, Mapping):
        return {k: REDACTED if k in keys else redact(v, keys) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [redact(v, keys) for v in data]
    return data


def parameter_summary(params: ParameterSet) -> dict[str, Any]:
    """Return per-network norms and non-finite counts."""
    summary: dict[str, Any] = {}
    for group in (GEN, DISC):
        tensors = params.group(group)
        bad = {
            name: int(np.count_nonzero(~np.isfinite(t.data)))
            for name, t in tensors.items()
            if not np.all(np.isfinite(t.data))
        }
        finite = [t.data[np.isfinite(t.data)] for t in tensors.values()]
        summary[group] = {
            "tensors": len(tensors),
            "parameters": params.num_parameters(group),
            "l2_norm": float(
                np.sqrt(sum(float(np.sum(f.astype(np.float64) ** 2)) for f in finite))
            ),
            "non_finite": bad,
        }
    taus = {
        name: [float(v) for v in t.data]
        for name, t in params.items()
        if name.endswith(".tau")
    }
    summary["tau_min"] = min((min(v) for v in taus.values()), default=None)
    return summary


def run_diagnostics(
    error: NumericalError,
    config: Mapping[str, Any],
    history: Sequence[Mapping[str, Any]],
    params: ParameterSet | None = None,
) -> dict[str, Any]:
    """Return the diagnostics for a run aborted by a numerical failure."""
    summary = {
        "error": {"message": str(error), "details": error.details},
        "config": dict(config),
        "history_tail": list(history)[-HISTORY_TAIL:],
        "parameters": parameter_summary(params) if params is not None else None,
    }
    return redact(summary)


def write_diagnostics(path: str | Path, summary: Mapping[str, Any]) -> Path:
    """Write a diagnostics dump as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = orjson.dumps(
        summary,
        option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY,
        default=str,
    )
    with atomic_write(path, mode="wb", overwrite=True) as fdesc:
        fdesc.write(payload)
    _LOGGER.error("Wrote diagnostics to %s", path)
    return path

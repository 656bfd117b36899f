"""Tests for the diagnostics dump."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import orjson
import pytest

from crt_restore.diagnostics import (
    HISTORY_TAIL,
    REDACTED,
    parameter_summary,
    redact,
    run_diagnostics,
    write_diagnostics,
)
from crt_restore.exceptions import NumericalError
from crt_restore.model import DISC, GEN, ParameterSet


def test_redact_nested() -> None:
    """Test redaction reaches into nested mappings and lists."""
    data = {"dataset": "/data/x", "runs": [{"out_dir": "/tmp/o", "seed": 1}], "seed": 2}
    assert redact(data) == {
        "dataset": REDACTED,
        "runs": [{"out_dir": REDACTED, "seed": 1}],
        "seed": 2,
    }


def test_parameter_summary_flags_non_finite(tiny_params: ParameterSet) -> None:
    """Test NaN tensors are counted per name and left out of the norm."""
    bias = tiny_params[f"{GEN}.head.bias"]
    bias.data = bias.data.copy()
    bias.data[:3] = np.nan
    summary = parameter_summary(tiny_params)
    assert summary[GEN]["non_finite"] == {f"{GEN}.head.bias": 3}
    assert summary[DISC]["non_finite"] == {}
    assert np.isfinite(summary[GEN]["l2_norm"])
    assert summary["tau_min"] == pytest.approx(np.sqrt(8.0), rel=1e-6)


def test_run_and_write(tmp_path: Path, tiny_params: ParameterSet) -> None:
    """Test the dump keeps the error details and the history tail."""
    error = NumericalError("non-finite generator loss", {"l1": float("nan"), "adv": 0.7})
    history = [{"micro_step": i} for i in range(25)]
    summary = run_diagnostics(error, {"dataset": "/secret", "seed": 4}, history, tiny_params)
    path = write_diagnostics(tmp_path / "run" / "diagnostics.json", summary)
    loaded = orjson.loads(path.read_bytes())
    assert loaded["error"]["message"] == "non-finite generator loss"
    assert loaded["error"]["details"] == {"adv": 0.7, "l1": None}
    assert loaded["config"] == {"dataset": REDACTED, "seed": 4}
    assert len(loaded["history_tail"]) == HISTORY_TAIL
    assert loaded["history_tail"][-1] == {"micro_step": 24}
    assert loaded["parameters"][GEN]["tensors"] == len(tiny_params.generator)

from __future__ import annotations

import csv
import io
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pytz

from .errors import ConfigurationError
from .models import CSV_COLUMNS, Params, SweepSummary, TrainLog

LOGGER = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "axis",
    "value",
    "status",
    "avg_forward_iters",
    "final_train_loss",
    "final_test_loss",
    "max_gammaA_opnorm",
    "error",
)


def atomic_write_bytes(path: Path | str, payload: bytes) -> Path:
    """Write through a sibling ``.tmp`` file and ``replace`` so readers never see a partial file."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    temp_path = target.with_suffix(target.suffix + ".tmp")
    try:
        temp_path.write_bytes(payload)
        temp_path.replace(target)
    except Exception:
        temp_path.unlink(missing_ok=True)
        raise
    return target


def atomic_write_text(path: Path | str, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_csv(columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(column)) for column in columns])
    return buffer.getvalue()


def write_log_csv(log: TrainLog, path: Path | str) -> Path:
    """One row per logged epoch; an absent test loss is an empty field."""
    return atomic_write_text(path, render_csv(CSV_COLUMNS, (row.csv_values() for row in log.rows)))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        number = float(value)
        # JSON has no inf / nan literals
        return number if math.isfinite(number) else repr(number)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _timestamp(timezone_name: str) -> str:
    try:
        tz = pytz.timezone(timezone_name)
    except pytz.UnknownTimeZoneError as exc:
        raise ConfigurationError(f"Unknown report_timezone '{timezone_name}'") from exc
    return datetime.now(tz).isoformat(timespec="seconds")


def sidecar_payload(
    log: TrainLog,
    run_config: Optional[Dict[str, Any]] = None,
    timezone_name: str = "UTC",
) -> Dict[str, Any]:
    extra = [
        {
            "epoch": row.epoch,
            "W_opnorm": row.W_opnorm,
            "b_norm": row.b_norm,
            "forward_converged": row.forward_converged,
            "flow_envelope": row.flow_envelope,
        }
        for row in log.rows
    ]
    payload: Dict[str, Any] = dict(log.header)
    payload["run_config"] = run_config
    payload["monitors"] = extra
    payload["avg_forward_iters"] = log.avg_forward_iters()
    payload["created_at"] = _timestamp(timezone_name)
    return _jsonable(payload)


def write_json(path: Path | str, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(_jsonable(payload), indent=2, ensure_ascii=True) + "\n")


def write_sidecar_json(
    log: TrainLog,
    path: Path | str,
    run_config: Optional[Dict[str, Any]] = None,
    timezone_name: str = "UTC",
) -> Path:
    return write_json(path, sidecar_payload(log, run_config, timezone_name))


def write_summary_csv(summaries: List[SweepSummary], path: Path | str) -> Path:
    rows = [
        {
            "axis": summary.axis,
            "value": summary.value,
            "status": summary.status,
            "avg_forward_iters": summary.avg_forward_iters,
            "final_train_loss": summary.final_train_loss,
            "final_test_loss": summary.final_test_loss,
            "max_gammaA_opnorm": summary.max_gammaA_opnorm,
            "error": summary.error,
        }
        for summary in summaries
    ]
    return atomic_write_text(path, render_csv(SUMMARY_COLUMNS, rows))


def save_params(path: Path | str, params: Params) -> Path:
    buffer = io.BytesIO()
    np.savez(buffer, W=params.W, A=params.A, b=params.b, gamma=np.float64(params.gamma))
    return atomic_write_bytes(path, buffer.getvalue())


def load_params(path: Path | str) -> Params:
    """Read an ``.npz`` archive holding W, A, b and a scalar gamma."""
    source = Path(path)
    if not source.exists():
        raise ConfigurationError(f"Parameter file not found: {source}")
    with np.load(source, allow_pickle=False) as archive:
        missing = [key for key in ("W", "A", "b", "gamma") if key not in archive.files]
        if missing:
            raise ConfigurationError(f"Parameter file {source} lacks arrays {missing}")
        params = Params(
            W=np.array(archive["W"], dtype=np.float64),
            A=np.array(archive["A"], dtype=np.float64),
            b=np.array(archive["b"], dtype=np.float64),
            gamma=float(archive["gamma"]),
        )
    return params.validate()

from __future__ import annotations

from io import BytesIO
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence, Tuple
import json
import zipfile

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .report import render_eval_report_text


FIXED_ZIP_DATETIME = (2020, 1, 1, 0, 0, 0)
HISTORY_COLUMNS = ("epoch", "loss", "val_loss", "val_precision", "val_recall", "val_f1", "threshold", "learning_rate")


def write_deterministic_zip(zip_path: str | Path, files: Sequence[Tuple[str, bytes]]) -> str:
    """Пишет ZIP с фиксированными датами и порядком записей: одинаковый вход даёт одинаковые байты."""
    zip_path = str(zip_path)
    with zipfile.ZipFile(zip_path, mode="w") as zf:
        for arc_name, payload in sorted(files):
            _writestr_deterministic(zf, arc_name, payload)
    return zip_path


def export_run_pack(
    zip_path: str | Path,
    report: Dict[str, Any],
    manifest: Mapping[str, Any],
    history: Sequence[Mapping[str, Any]],
) -> str:
    """Архив запуска: отчёт (json и txt), манифест, история эпох и кривая обучения."""
    zip_path = str(zip_path)
    artifacts = report.setdefault("artifacts", {})
    artifacts["run_pack_path"] = Path(zip_path).name

    files = [
        ("run/report.json", _json_bytes(report)),
        ("run/report.txt", render_eval_report_text(report).encode("utf-8")),
        ("run/manifest.json", _json_bytes(manifest)),
        ("run/history.csv", history_to_csv_bytes(history)),
        ("run/learning_curve.png", render_learning_curve_png(history)),
    ]
    return write_deterministic_zip(zip_path, files)


def render_learning_curve_png(history: Sequence[Mapping[str, Any]]) -> bytes:
    epochs = [int(row.get("epoch", i + 1)) for i, row in enumerate(history)]
    fig = Figure(figsize=(6.0, 3.6), dpi=100)
    FigureCanvasAgg(fig)
    ax_loss = fig.add_subplot(1, 1, 1)
    ax_loss.plot(epochs, [float(row.get("loss", 0.0)) for row in history], color="#4C72B0", marker="o", label="loss")
    ax_loss.set_xlabel("эпоха")
    ax_loss.set_ylabel("loss")
    ax_f1 = ax_loss.twinx()
    ax_f1.plot(epochs, [float(row.get("val_f1", 0.0)) for row in history], color="#DD8452", marker="s", label="val F1")
    ax_f1.set_ylabel("F1")
    ax_f1.set_ylim(0.0, 1.0)
    ax_loss.grid(True, alpha=0.3)
    fig.tight_layout()
    buf = BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    return buf.getvalue()


def history_to_csv_bytes(history: Sequence[Mapping[str, Any]]) -> bytes:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(_csv_escape(_format_cell(row.get(col))) for col in HISTORY_COLUMNS))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_bytes(payload: Mapping[str, Any]) -> bytes:
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8")


def _writestr_deterministic(zf: zipfile.ZipFile, arc_name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(filename=arc_name, date_time=FIXED_ZIP_DATETIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.create_system = 3
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def _csv_escape(value: str) -> str:
    if any(ch in value for ch in [",", '"', "\n", "\r"]):
        return '"' + value.replace('"', '""') + '"'
    return value

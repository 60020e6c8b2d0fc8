import json
import logging
import os
import re
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from .exceptions import ReportSchemaError
from .models import REPORT_SCHEMA_VERSION, AttackSpace, AttackSpec, EvalReport

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
ROBUST_TABLE_FILE = "robust_accuracy.csv"
CLEAN_TABLE_FILE = "clean_accuracy.csv"
TIMINGS_FILE = "timings.csv"
BEST_COLUMN = "best"


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "run"


def output_stem(model_name: str, label: str) -> str:
    return f"{slugify(model_name)}/{slugify(label)}"


def atomic_write_text(path: Path, text: str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def attack_label(spec: AttackSpec, norm: str, preset: Optional[str] = None) -> str:
    """
    Row label of an attack in comparison tables, e.g. "BIM-10 l2 network".
    ``preset`` is the attack that actually runs when the spec overrides its counts.
    """
    if spec.label:
        return spec.label
    parts = [preset or spec.preset, norm]
    if spec.space is AttackSpace.NETWORK:
        parts.append("network")
    if spec.post_quantize:
        parts.append("quantized")
    return " ".join(parts)


def _dump_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def comparison_table(records: Sequence[Dict], value: str = "robust_accuracy") -> pd.DataFrame:
    """
    One row per attack label, one column per model, plus a ``best`` column
    naming the model(s) with the highest value in that row.
    """
    frame = pd.DataFrame(records, columns=["label", "model_name", value])
    duplicated = frame.duplicated(["label", "model_name"])
    if duplicated.any():
        first = frame[duplicated].iloc[0]
        raise ReportSchemaError(f"duplicate result for model {first['model_name']!r} under {first['label']!r}")
    rows = list(dict.fromkeys(frame["label"]))
    columns = list(dict.fromkeys(frame["model_name"]))
    table = frame.pivot(index="label", columns="model_name", values=value).reindex(index=rows, columns=columns)
    best = []
    for _, row in table.iterrows():
        top = row.max()
        best.append("|".join(str(model) for model in columns if row[model] == top))
    table[BEST_COLUMN] = best
    table.index.name = "attack"
    table.columns.name = None
    return table


def confusion_frame(report: EvalReport) -> pd.DataFrame:
    names = report.class_names or [str(c) for c in range(len(report.confusion))]
    frame = pd.DataFrame(report.confusion, index=names, columns=names)
    frame.index.name = "true\\predicted"
    return frame


def render_outputs(reports: Sequence[EvalReport]) -> Dict[str, str]:
    """All files of an evaluation run, keyed by path relative to the output directory."""
    files: Dict[str, str] = {}
    summary = {"schema_version": REPORT_SCHEMA_VERSION, "reports": []}
    timings = []
    stems: Dict[str, EvalReport] = {}
    for report in reports:
        stem = output_stem(report.model_name, report.label)
        if stem in stems:
            other = stems[stem]
            raise ReportSchemaError(
                f"{report.model_name!r} / {report.label!r} and {other.model_name!r} / {other.label!r} "
                f"would both be written to reports/{stem}.json")
        stems[stem] = report
        payload = report.model_dump(mode="json")
        files[f"reports/{stem}.json"] = _dump_json(payload)
        files[f"confusion/{stem}.csv"] = confusion_frame(report).to_csv()
        summary["reports"].append(payload)
        timings.append({"model": report.model_name, "attack": report.label, "seconds": report.duration_seconds})
    records = [r.model_dump(include={"label", "model_name", "robust_accuracy", "clean_accuracy"}) for r in reports]
    files[ROBUST_TABLE_FILE] = comparison_table(records, "robust_accuracy").to_csv()
    clean = pd.DataFrame(records).drop_duplicates("model_name")[["model_name", "clean_accuracy"]]
    files[CLEAN_TABLE_FILE] = clean.to_csv(index=False)
    files[SUMMARY_FILE] = _dump_json(summary)
    files[TIMINGS_FILE] = pd.DataFrame(timings, columns=["model", "attack", "seconds"]).to_csv(index=False)
    return files


def write_outputs(files: Dict[str, str], output_dir: Union[str, Path]) -> List[Path]:
    output_dir = Path(output_dir)
    written = []
    for relative, text in files.items():
        path = output_dir / relative
        atomic_write_text(path, text)
        written.append(path)
    logger.info("Wrote %d report files to %s", len(written), output_dir)
    return written


def load_reports(path: Union[str, Path]) -> List[EvalReport]:
    """Read a ``summary.json`` or a single-report JSON file."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    version = data.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ReportSchemaError(f"{path}: schema version {version} (expected {REPORT_SCHEMA_VERSION})")
    items = data["reports"] if "reports" in data else [data]
    for item in items:
        if item.get("schema_version", version) != version:
            raise ReportSchemaError(f"{path}: mixed schema versions inside one file")
    return [EvalReport.model_validate(item) for item in items]


def merge_reports(inputs: Sequence[Union[str, Path]]) -> Dict[str, str]:
    """
    Aggregate several evaluation outputs into one comparison table: one row
    per attack, one column per model, highest robust accuracy flagged.
    """
    reports: List[EvalReport] = []
    for path in inputs:
        reports.extend(load_reports(path))
    records = [r.model_dump(include={"label", "model_name", "robust_accuracy"}) for r in reports]
    table = comparison_table(records)
    merged = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "models": [c for c in table.columns if c != BEST_COLUMN],
        "rows": [],
    }
    for label, row in table.iterrows():
        values = {model: None if pd.isna(row[model]) else float(row[model]) for model in merged["models"]}
        merged["rows"].append({"attack": label, "robust_accuracy": values, "best": row[BEST_COLUMN].split("|")})
    return {"comparison.csv": table.to_csv(), "comparison.json": _dump_json(merged)}

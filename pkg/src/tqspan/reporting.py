"""Deterministic report emission.

Every report is written as JSON (full precision, sorted keys) plus a TSV
view rounded to the reporting precision. The JSON embeds the config echo,
seed, tool version, and input digests; wall-clock timestamps go to a
separate metadata file so repeated runs stay byte-identical.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def jsonsafe(value: Any):
    """Recursively replace non-finite floats and coerce keys to strings."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): jsonsafe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonsafe(v) for v in value]
    return value


def fmt(value: float | None, decimals: int) -> str:
    if value is None:
        return ""
    return f"{value:.{decimals}f}"


def envelope(command: str, version: str, config: Mapping[str, Any],
             inputs: Mapping[str, str | Path], seed: int,
             results: Mapping[str, Any]) -> dict:
    return jsonsafe({
        "tool": "tqspan",
        "version": version,
        "command": command,
        "seed": seed,
        "config": dict(config),
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in inputs.items()
        },
        "results": results,
    })


def write_report(out_dir: str | Path, name: str, payload: Mapping[str, Any],
                 tsv_rows: Sequence[Sequence[str]]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{name}.json"
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    (out / f"{name}.tsv").write_text(
        "".join("\t".join(row) + "\n" for row in tsv_rows), encoding="utf-8"
    )
    (out / f"{name}.meta.json").write_text(
        json.dumps({
            "report": name,
            "completed_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }, indent=2) + "\n",
        encoding="utf-8",
    )
    return json_path

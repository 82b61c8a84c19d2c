from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class RunReport:
    kind: str
    seed: int
    config: dict
    results: dict[str, Any]
    files: dict[str, str] = field(default_factory=dict)  # relative path -> sha256
    versions: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "results": self.results,
            "files": self.files,
            "versions": self.versions,
        }


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _flatten(prefix: str, value: Any, out: list[tuple[str, str]]) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    elif isinstance(value, list) and any(isinstance(v, (dict, list)) for v in value):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, json.dumps(value)))


def render(report: RunReport, fmt: str = "json") -> str:
    doc = report.as_dict()
    if fmt == "json":
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "text":
        lines: list[tuple[str, str]] = []
        _flatten("", doc, lines)
        width = max(len(k) for k, _ in lines)
        return "".join(f"{k.ljust(width)}  {v}\n" for k, v in lines)
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report: RunReport, path: str | Path, fmt: str = "json") -> Path:
    """Write the report; the text form carries every value of the JSON form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(report, fmt))
    return path

"""Figure specifications: what to draw, from which artifacts, to where.

A spec is a small JSON document; paths inside it are resolved relative to
the spec file's own directory so fixture trees are relocatable:

    {
      "kind": "regret",
      "inputs": ["slopes.csv", "summary.json"],
      "output": "regret.png",
      "references": [0.5, 0.6667],
      "title": "optional override"
    }

Scales default per kind and accept only "log" / "linear". The tool never
recomputes experiment quantities: fitted slopes are read from summary.json,
error values from the identification report, and reference lines are pure
overlays anchored to the plotted data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaMismatch

KINDS = ("regret", "sysid_error", "consensus", "gap")
_SCALES = ("log", "linear")


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[Path, ...]
    output: Path
    x_scale: str | None = None
    y_scale: str | None = None
    references: tuple[float, ...] = field(default_factory=tuple)
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaMismatch(
                f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise SchemaMismatch("spec needs at least one input path")
        for scale in (self.x_scale, self.y_scale):
            if scale is not None and scale not in _SCALES:
                raise SchemaMismatch(
                    f"scale {scale!r} not in {_SCALES}")
        if self.output.suffix.lower() != ".png":
            raise SchemaMismatch(
                f"output must be a .png path, got {self.output.name!r}")


def load_spec(path: str | Path) -> FigureSpec:
    """Parse and validate a figure spec file; inputs must already exist."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise SchemaMismatch(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"spec {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaMismatch("spec root must be a JSON object")
    for key in ("kind", "inputs", "output"):
        if key not in raw:
            raise SchemaMismatch(f"spec is missing required key {key!r}")
    inputs = raw["inputs"]
    if not isinstance(inputs, list) or not all(isinstance(p, str) for p in inputs):
        raise SchemaMismatch("spec 'inputs' must be a list of path strings")
    base = path.parent
    resolved = tuple((base / p) for p in inputs)
    for p in resolved:
        if not p.is_file():
            raise SchemaMismatch(f"input artifact does not exist: {p}")
    refs = raw.get("references", [])
    if not isinstance(refs, list) or not all(
            isinstance(r, (int, float)) for r in refs):
        raise SchemaMismatch("spec 'references' must be a list of numbers")
    title = raw.get("title")
    if title is not None and not isinstance(title, str):
        raise SchemaMismatch("spec 'title' must be a string")
    return FigureSpec(
        kind=str(raw["kind"]),
        inputs=resolved,
        output=base / str(raw["output"]),
        x_scale=raw.get("x_scale"),
        y_scale=raw.get("y_scale"),
        references=tuple(float(r) for r in refs),
        title=title,
    )

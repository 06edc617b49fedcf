"""Versioned decimal text format for fitted models.

Artifacts are plain UTF-8 text: a version line, optional '#' comments,
``key<TAB>value`` metadata, and named blocks of either float matrices
(row-major, one row per line, repr() floats so values round-trip
bit-exactly) or string tables (rows of tab-separated cells). Every
artifact the pipeline writes starts with a header recording the tool
version, the seed, and digests of the inputs it was derived from.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HeaderMismatch

FORMAT_VERSION = "asas-artifact v1"
TOOL_VERSION = "0.1.0"


def fmt_float(x: float) -> str:
    return repr(float(x))


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


def artifact_header(seed: int | None, inputs: dict[str, bytes] | None = None) -> str:
    """One '#'-comment line: tool version, seed, input digests."""
    parts = [f"#asas\tversion={TOOL_VERSION}", f"seed={seed if seed is not None else '-'}"]
    if inputs:
        digests = ",".join(f"{name}:{digest(data)}" for name, data in sorted(inputs.items()))
        parts.append(f"inputs={digests}")
    return "\t".join(parts)


@dataclass
class Artifact:
    """Parsed artifact: metadata plus named matrix and string blocks."""

    kind: str
    meta: dict[str, str] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    tables: dict[str, list[list[str]]] = field(default_factory=dict)

    def dump(self, header: str | None = None) -> str:
        lines = []
        if header:
            lines.append(header)
        lines.append(f"#{FORMAT_VERSION} kind={self.kind}")
        for key in sorted(self.meta):
            lines.append(f"{key}\t{self.meta[key]}")
        for name in sorted(self.tables):
            rows = self.tables[name]
            lines.append(f"[strings {name} {len(rows)}]")
            lines.extend("\t".join(row) for row in rows)
        for name in sorted(self.arrays):
            arr = np.atleast_2d(self.arrays[name])
            lines.append(f"[matrix {name} {arr.shape[0]} {arr.shape[1]}]")
            lines.extend("\t".join(fmt_float(x) for x in row) for row in arr)
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path, header: str | None = None) -> None:
        Path(path).write_text(self.dump(header), encoding="utf-8")

    @classmethod
    def parse(cls, text: str) -> "Artifact":
        lines = text.splitlines()
        start = 0
        while start < len(lines) and not lines[start].startswith(f"#{FORMAT_VERSION} kind="):
            if not lines[start].startswith("#"):
                raise HeaderMismatch(f"not a {FORMAT_VERSION} file")
            start += 1
        if start == len(lines):
            raise HeaderMismatch(f"not a {FORMAT_VERSION} file")
        art = cls(kind=lines[start].split("kind=", 1)[1])
        i = start + 1
        while i < len(lines):
            line = lines[i]
            if line.startswith("#") or line == "":
                i += 1
            elif line.startswith("[strings "):
                _, name, count = line[1:-1].split(" ")
                art.tables[name] = [lines[i + 1 + j].split("\t") for j in range(int(count))]
                i += 1 + int(count)
            elif line.startswith("[matrix "):
                _, name, n_rows, n_cols = line[1:-1].split(" ")
                n_rows, n_cols = int(n_rows), int(n_cols)
                data = np.empty((n_rows, n_cols), dtype=float)
                for j in range(n_rows):
                    data[j] = [float(x) for x in lines[i + 1 + j].split("\t")]
                art.arrays[name] = data
                i += 1 + n_rows
            else:
                key, _, value = line.partition("\t")
                art.meta[key] = value
                i += 1
        return art

    @classmethod
    def load(cls, path: str | Path, expect_kind: str | None = None) -> "Artifact":
        art = cls.parse(Path(path).read_text(encoding="utf-8"))
        if expect_kind is not None and art.kind != expect_kind:
            raise HeaderMismatch(f"expected kind={expect_kind}, found {art.kind}")
        return art

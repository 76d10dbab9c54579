"""Streaming CityJSONL (CityJSON text sequence) reader and writer.

The first line is a ``CityJSON`` header carrying the transform and metadata;
every following non-blank line is one ``CityJSONFeature``.
"""

from __future__ import annotations

import contextlib
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import DataError, FeatureLineError, HeaderError, StructuralError
from .model import CityFeature, DatasetMetadata

log = logging.getLogger(__name__)

MIN_VERSION = (1, 1)


def _version_tuple(version: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in str(version).split("."))
    except ValueError:
        return ()


@dataclass
class SequenceHeader:
    raw: dict
    metadata: DatasetMetadata

    @classmethod
    def from_json(cls, doc) -> "SequenceHeader":
        if not isinstance(doc, dict) or doc.get("type") != "CityJSON":
            raise HeaderError("first line is not a CityJSON header object")
        if _version_tuple(doc.get("version", ""))[:2] < MIN_VERSION:
            raise HeaderError(f"CityJSON version {doc.get('version')!r} is older than 1.1")
        if "transform" not in doc:
            raise HeaderError("header has no transform (mandatory since CityJSON 1.1)")
        try:
            return cls(doc, DatasetMetadata.from_header(doc))
        except StructuralError as exc:
            raise HeaderError(str(exc)) from exc

    @classmethod
    def from_metadata(cls, meta: DatasetMetadata) -> "SequenceHeader":
        raw = {
            "type": "CityJSON",
            "version": meta.version,
            "transform": meta.transform.to_json(),
            "CityObjects": {},
            "vertices": [],
        }
        if meta.metadata:
            raw["metadata"] = meta.metadata
        if meta.geometry_templates is not None:
            raw["geometry-templates"] = meta.geometry_templates
        if meta.extensions is not None:
            raw["extensions"] = meta.extensions
        return cls(raw, meta)


class FeatureSequence:
    """Lazily parsed features of one CityJSONL stream.

    ``on_error="skip"`` logs malformed lines and records them in
    :attr:`errors`; ``on_error="raise"`` raises :class:`FeatureLineError`.
    """

    def __init__(self, header: SequenceHeader, lines: Iterator, on_error: str = "skip", first_lineno: int = 2):
        if on_error not in ("skip", "raise"):
            raise ValueError(f"on_error must be 'skip' or 'raise', not {on_error!r}")
        self.header = header
        self.on_error = on_error
        self.errors: list[FeatureLineError] = []
        self._lines = lines
        self._lineno = first_lineno

    def __iter__(self) -> Iterator[CityFeature]:
        for line in self._lines:
            lineno = self._lineno
            self._lineno += 1
            if not line.strip():
                continue
            try:
                yield parse_feature_line(line)
            except (ValueError, StructuralError) as exc:
                err = FeatureLineError(lineno, str(exc))
                if self.on_error == "raise":
                    raise err from exc
                log.warning("skipping %s", err)
                self.errors.append(err)


def parse_feature_line(line) -> CityFeature:
    doc = json.loads(line)
    if not isinstance(doc, dict):
        raise StructuralError("line is not a JSON object")
    kind = doc.get("type")
    if kind is None:
        if not all(k in doc for k in ("id", "CityObjects", "vertices")):
            raise StructuralError("untyped line lacks id/CityObjects/vertices")
        log.warning("feature %r has no type member; accepted as CityJSONFeature", doc.get("id"))
    elif kind != "CityJSONFeature":
        raise StructuralError(f"unexpected line type {kind!r}")
    return CityFeature.from_json(doc)


def read_sequence(stream: IO | Iterable, on_error: str = "skip") -> FeatureSequence:
    """Parse the header eagerly and return a lazy :class:`FeatureSequence`.

    ``stream`` is anything iterating over lines (text or bytes).
    """
    lines = iter(stream)
    for lineno, first in enumerate(lines, start=1):
        if first.strip():
            break
    else:
        raise HeaderError("empty stream: no CityJSON header line")
    try:
        doc = json.loads(first)
    except ValueError as exc:
        raise HeaderError(f"header line {lineno} is not valid JSON: {exc}") from exc
    return FeatureSequence(SequenceHeader.from_json(doc), lines, on_error, lineno + 1)


def dumps_compact(doc) -> str:
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


class SequenceWriteError(DataError):
    def __init__(self, count: int, cause: Exception):
        super().__init__(f"write failed after {count} features: {cause}")
        self.count = count


def write_sequence(header: SequenceHeader | dict, features: Iterable, sink: IO) -> int:
    """Write the header then one compact line per feature; return the
    number of features written. Features may be :class:`CityFeature` or
    plain JSON dicts."""
    raw = header.raw if isinstance(header, SequenceHeader) else header
    binary = isinstance(sink, (io.RawIOBase, io.BufferedIOBase)) or "b" in str(getattr(sink, "mode", ""))
    count = 0

    def put(doc):
        text = dumps_compact(doc) + "\n"
        sink.write(text.encode("utf-8") if binary else text)

    try:
        put(raw)
        for f in features:
            put(f.to_json() if isinstance(f, CityFeature) else f)
            count += 1
        sink.flush()
    except OSError as exc:
        raise SequenceWriteError(count, exc) from exc
    return count


@contextlib.contextmanager
def open_input(path: str | Path):
    """Open ``path`` for reading as UTF-8 text lines; ``-`` is stdin."""
    if str(path) == "-":
        yield io.TextIOWrapper(sys.stdin.buffer, encoding="utf-8")
        return
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {p}")
    with p.open("r", encoding="utf-8") as fh:
        yield fh


@contextlib.contextmanager
def open_output(path: str | Path):
    """Open ``path`` for writing UTF-8 text; ``-`` is stdout."""
    if str(path) == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        yield fh

"""Fixture file formats: region manifests and weight files.

Region manifest
---------------
UTF-8 text, one record per line. Blank lines and lines starting with
``#`` are ignored. The first record names the workload::

    workload=CNN_MNIST

Every other record describes one region as whitespace-separated
``key=value`` pairs::

    region id=C class=candidate time_fraction=0.688 executions=4608 \
        store_fraction=0.0196 checks=1 mode=drop bounds=static

Keys: ``id`` (required), ``class`` (``crucial`` | ``candidate``),
``time_fraction`` (float), ``executions`` (int, region body runs per
inference), ``store_fraction`` (float), ``checks`` (int, bound checks per
execution), ``mode`` (``clamp`` | ``drop``) with either ``lower``/``upper``
floats or ``bounds=static`` (bounds derived from the weights at load).
Unknown keys are errors.

Weight file
-----------
Little-endian binary::

    b"XLWT"                      magic
    u32 count                    number of tensors
    count x {u16 name_len, name (utf-8), u32 ndim, ndim x u32 dims}
    float32 payload of every tensor, in header order, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import (
    BoundMode,
    BoundSpec,
    CrossLayerError,
    RegionClass,
    RegionDescriptor,
    RegionTable,
    validate_region_set,
)

WEIGHT_MAGIC = b"XLWT"
STATIC = "static"

_REGION_KEYS = {"id", "class", "time_fraction", "executions", "store_fraction", "checks",
                "mode", "lower", "upper", "bounds"}


class ManifestError(CrossLayerError):
    pass


class WeightFileError(CrossLayerError):
    pass


def _pairs(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ManifestError(f"line {lineno}: expected key=value, got {tok!r}")
        if key in out:
            raise ManifestError(f"line {lineno}: repeated key {key!r}")
        out[key] = value
    return out


def parse_manifest(text: str, static_bounds: Optional[Mapping[str, BoundSpec]] = None) -> RegionTable:
    """Parse a manifest; ``static_bounds`` resolves ``bounds=static`` regions."""
    workload = None
    regions = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] != "region":
            rec = _pairs(tokens, lineno)
            if set(rec) != {"workload"} or workload is not None:
                raise ManifestError(f"line {lineno}: unexpected record {line!r}")
            workload = rec["workload"]
            continue
        if workload is None:
            raise ManifestError(f"line {lineno}: region before workload record")
        rec = _pairs(tokens[1:], lineno)
        unknown = set(rec) - _REGION_KEYS
        if unknown:
            raise ManifestError(f"line {lineno}: unknown keys {sorted(unknown)}")
        try:
            regions.append(_region(workload, rec, static_bounds or {}))
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
    if workload is None:
        raise ManifestError("manifest has no workload record")
    return validate_region_set(regions)


def _region(workload: str, rec: dict[str, str], static_bounds: Mapping[str, BoundSpec]) -> RegionDescriptor:
    rid = rec["id"]
    bound = None
    if "mode" in rec:
        mode = BoundMode(rec["mode"])
        if rec.get("bounds") == STATIC:
            if rid not in static_bounds:
                raise ValueError(f"region {rid} needs static bounds from the workload")
            bound = BoundSpec(static_bounds[rid].lower, static_bounds[rid].upper, mode)
        else:
            bound = BoundSpec(float(rec["lower"]), float(rec["upper"]), mode)
    elif {"lower", "upper", "bounds"} & set(rec):
        raise ValueError("bounds given without mode")
    return RegionDescriptor(
        id=rid,
        workload=workload,
        region_class=RegionClass(rec["class"]),
        time_fraction=float(rec["time_fraction"]),
        bound_spec=bound,
        store_count_fraction=float(rec.get("store_fraction", 0.0)),
        check_count=int(rec.get("checks", 0)),
        executions=int(rec.get("executions", 1)),
    )


def format_manifest(regions: RegionTable, static: frozenset[str] = frozenset(), header: str = "") -> str:
    lines = [f"# {h}" for h in header.splitlines()] + [f"workload={regions.workload}"]
    for r in regions.values():
        parts = [f"id={r.id}", f"class={r.region_class.value}", f"time_fraction={r.time_fraction!r}",
                 f"executions={r.executions}", f"store_fraction={r.store_count_fraction!r}",
                 f"checks={r.check_count}"]
        if r.bound_spec is not None:
            parts.append(f"mode={r.bound_spec.mode.value}")
            if r.id in static:
                parts.append(f"bounds={STATIC}")
            else:
                parts += [f"lower={r.bound_spec.lower!r}", f"upper={r.bound_spec.upper!r}"]
        lines.append("region " + " ".join(parts))
    return "\n".join(lines) + "\n"


def read_manifest(path: str | Path, static_bounds: Optional[Mapping[str, BoundSpec]] = None) -> RegionTable:
    return parse_manifest(Path(path).read_text(encoding="utf-8"), static_bounds)


def write_weights(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    header = [WEIGHT_MAGIC, struct.pack("<I", len(tensors))]
    payload = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded)) + encoded)
        header.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        payload.append(arr.tobytes())
    Path(path).write_bytes(b"".join(header + payload))


def read_weights(path: str | Path) -> dict[str, np.ndarray]:
    return parse_weights(Path(path).read_bytes())


def parse_weights(data: bytes) -> dict[str, np.ndarray]:
    try:
        if data[:4] != WEIGHT_MAGIC:
            raise WeightFileError("bad weight-file magic")
        (count,) = struct.unpack_from("<I", data, 4)
        pos = 8
        shapes = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{ndim}I", data, pos + 4)
            pos += 4 + 4 * ndim
            shapes.append((name, dims))
        out = {}
        for name, dims in shapes:
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise WeightFileError(f"payload truncated in tensor {name}")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).astype(np.float32).reshape(dims)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise WeightFileError(f"malformed weight file: {exc}") from exc
    if pos != len(data):
        raise WeightFileError(f"{len(data) - pos} trailing bytes after payload")
    return out

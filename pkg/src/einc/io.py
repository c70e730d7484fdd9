"""Byte-deterministic artifact formats: CSV fields, PGM masks, JSON summaries.

Field CSVs carry a header ``i1,...,in,value`` and one row per node in
row-major (lexicographic) order, with values printed to 17 significant
digits so round-trips are exact.  Masks are binary PGMs (P5, maxval 255,
255 = inside); 3D masks are a stack of per-slice PGMs plus a JSON index.
JSON documents are written with sorted keys and no trailing whitespace.
"""
from __future__ import annotations

import json
import os

import numpy as np

__all__ = [
    "write_field_csv",
    "read_field_csv",
    "write_mask_pgm",
    "read_mask_pgm",
    "write_mask_stack",
    "read_mask_stack",
    "write_json",
    "read_json",
]


def write_field_csv(path, values: np.ndarray):
    values = np.asarray(values, dtype=float)
    n = values.ndim
    header = ",".join(f"i{a + 1}" for a in range(n)) + ",value"
    lines = [header]
    for idx in np.ndindex(values.shape):
        coords = ",".join(str(i) for i in idx)
        lines.append(f"{coords},{values[idx]:.17g}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n = len(header) - 1
        rows = [line.strip().split(",") for line in fh if line.strip()]
    idx = np.array([[int(c) for c in row[:n]] for row in rows])
    vals = np.array([float(row[n]) for row in rows])
    shape = tuple(idx.max(axis=0) + 1)
    out = np.empty(shape)
    out[tuple(idx.T)] = vals
    return out


def write_mask_pgm(path, mask: np.ndarray):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("PGM masks are 2D; use write_mask_stack for 3D")
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask.astype(np.uint8) * 255).tobytes())


def read_mask_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5" or maxval != 255:
        raise ValueError("expected a binary P5 PGM with maxval 255")
    raw = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8).reshape(h, w)
    return raw >= 128


def write_mask_stack(out_dir, mask: np.ndarray, prefix: str = "mask"):
    """3D mask as per-slice PGMs (along the first axis) plus a JSON index."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError("mask stack requires a 3D mask")
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for z in range(mask.shape[0]):
        name = f"{prefix}_{z:04d}.pgm"
        write_mask_pgm(os.path.join(out_dir, name), mask[z])
        files.append(name)
    index = {"axis": 0, "shape": list(mask.shape), "slices": files}
    write_json(os.path.join(out_dir, f"{prefix}_index.json"), index)
    return index


def read_mask_stack(index_path) -> np.ndarray:
    index = read_json(index_path)
    base = os.path.dirname(index_path)
    slices = [read_mask_pgm(os.path.join(base, name)) for name in index["slices"]]
    return np.stack(slices, axis=0)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, doc):
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=2)
    with open(path, "w", newline="\n") as fh:
        fh.write(text + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)

"""Deterministic CSV/JSON emission and the per-run file manifest.

Numbers are written with fixed six-digit precision and '\n' newlines, so a
rerun with the same config reproduces every artifact byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os


def format_cell(value) -> str:
    if value is None:
        return "na"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, canonical_config: dict, tool_version: str) -> str:
    """Inventory every file in out_dir (except the manifest) with digests."""
    entries = []
    for root, _, files in os.walk(out_dir):
        for name in files:
            if name == "manifest.json":
                continue
            full = os.path.join(root, name)
            rel = os.path.relpath(full, out_dir).replace(os.sep, "/")
            entries.append({
                "path": rel,
                "bytes": os.path.getsize(full),
                "sha256": sha256_of(full),
            })
    entries.sort(key=lambda e: e["path"])
    manifest = {
        "tool_version": tool_version,
        "config": canonical_config,
        "files": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, manifest)
    return path

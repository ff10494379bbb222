"""Run manifests: the one self-describing record in every output directory.

A manifest carries the command, resolved configuration, per-stream seeds,
sha256 checksums of the numeric artifacts, and start/end timestamps.
Timestamps live only here, so byte-comparisons of outputs exclude the
manifest itself.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from .errors import IoError

MANIFEST_NAME = "manifest.json"


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def checksum_tree(root, skip_names: tuple[str, ...] = (MANIFEST_NAME,)) -> dict[str, str]:
    root = Path(root)
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name not in skip_names:
            out[str(path.relative_to(root))] = file_checksum(path)
    return out


class ManifestWriter:
    def __init__(self, command: str, args: dict, config: dict, seeds: dict):
        self.record = {
            "command": command,
            "args": {k: str(v) for k, v in args.items()},
            "config": config,
            "seeds": seeds,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }

    def finish(self, out_dir, artifacts: dict | None = None) -> dict:
        out_dir = Path(out_dir)
        self.record["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.record["checksums"] = checksum_tree(out_dir)
        if artifacts:
            self.record["artifacts"] = artifacts
        try:
            (out_dir / MANIFEST_NAME).write_text(
                json.dumps(self.record, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write manifest in {out_dir}: {exc}") from exc
        return self.record


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise IoError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))

"""Run manifests: enough provenance to reproduce any CLI run bit for bit."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class RunManifest:
    tool: str
    version: str
    command: list[str]          # resolved argv, replayable verbatim
    config: dict
    seeds: dict
    input_hashes: dict          # path -> sha256
    outputs: list[str]
    wall_time: float


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, manifest: RunManifest) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(manifest), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_manifest(path) -> RunManifest:
    with open(path) as fh:
        payload = json.load(fh)
    return RunManifest(**payload)

"""Run manifests: a JSON sidecar recording exactly what produced each output."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .noise import RNG_ALGORITHM

__all__ = ["RunManifest", "write_manifest", "sha256_file"]


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


@dataclass
class RunManifest:
    """Config snapshot, seed, RNG algorithm, code version, duration, outputs."""

    command: str
    config: dict
    master_seed: int
    rng_algorithm: str
    code_version: str
    duration_s: float
    outputs: list

    @classmethod
    def collect(cls, command: str, config, started: float, output_paths) -> "RunManifest":
        outputs = [{"path": str(p), "sha256": sha256_file(p)} for p in output_paths]
        return cls(command=command, config=_jsonable(config),
                   master_seed=int(getattr(config, "rng_seed", 0)),
                   rng_algorithm=RNG_ALGORITHM, code_version=__version__,
                   duration_s=round(time.time() - started, 3), outputs=outputs)


def write_manifest(manifest: RunManifest, out_path: str | Path) -> Path:
    """Write ``<out>.manifest.json`` next to the main output; verifies that
    every referenced output still hash-matches at write time."""
    for entry in manifest.outputs:
        current = sha256_file(entry["path"])
        if current != entry["sha256"]:
            raise RuntimeError(f"output {entry['path']} changed before manifest write")
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(_jsonable(asdict(manifest)), indent=2, sort_keys=True) + "\n")
    return path

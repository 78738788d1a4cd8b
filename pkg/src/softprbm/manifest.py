"""Run manifests: config snapshot, checksums, seeds and timings per command."""

from __future__ import annotations

import hashlib
import json
import platform
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ValidationError

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def derive_seed(root: int, stage: str) -> int:
    """Stable per-stage seed fanned out from the root seed."""
    ss = np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(stage.encode("utf-8")),))
    return int(ss.generate_state(1)[0])


def tool_version() -> dict:
    from . import __version__

    return {"softprbm": __version__, "numpy": np.__version__, "python": platform.python_version()}


@dataclass
class RunManifest:
    """What ran, on which inputs, and what it wrote.

    ``outputs`` maps paths relative to the output directory to sha256 digests.
    Timings are informational and excluded from reproducibility checks.
    """

    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    version: dict = field(default_factory=tool_version)
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def add_input(self, path) -> str:
        path = Path(path).resolve()
        if not path.is_file():
            raise ValidationError(f"input file not found: {path}")
        self.inputs[str(path)] = sha256_file(path)
        return str(path)

    def record_outputs(self, out_dir, paths) -> None:
        out_dir = Path(out_dir).resolve()
        for p in paths:
            p = Path(p).resolve()
            self.outputs[p.relative_to(out_dir).as_posix()] = sha256_file(p)
        self.outputs = dict(sorted(self.outputs.items()))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "run_manifest",
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "version": self.version,
            "timings": self.timings,
            "outputs": self.outputs,
        }

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read manifest {path}: {exc}") from None
        if data.get("type") != "run_manifest":
            raise ValidationError(f"{path} is not a run manifest")
        return cls(
            data["command"],
            data["config"],
            data.get("inputs", {}),
            data.get("seeds", {}),
            data.get("version", {}),
            data.get("timings", {}),
            data.get("outputs", {}),
        )


def compare_outputs(expected: dict, actual: dict) -> list[str]:
    """Human-readable differences between two output checksum maps."""
    problems = []
    for name in sorted(set(expected) | set(actual)):
        a, b = expected.get(name), actual.get(name)
        if a is None:
            problems.append(f"unexpected output {name}")
        elif b is None:
            problems.append(f"missing output {name}")
        elif a != b:
            problems.append(f"checksum differs for {name}")
    return problems

"""Dataset manifest: one JSON file listing every clip and its streams.

Stream paths are stored relative to the manifest's directory. Directory
streams hold ``%06d.<ext>`` files; the ``homography`` stream is a JSON
list of 3x3 matrices.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ClipEntry:
    id: str
    n_frames: int
    streams: dict[str, str]
    digest: str = ""
    params: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "n_frames": self.n_frames, "params": self.params,
                "streams": dict(sorted(self.streams.items())), "digest": self.digest}


@dataclass
class Manifest:
    root: Path
    clips: list[ClipEntry] = field(default_factory=list)
    synthesis: dict[str, Any] = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def path_of(self, clip: ClipEntry, stream: str) -> Path:
        if stream not in clip.streams:
            raise ManifestError(f"clip {clip.id} has no stream {stream!r}")
        return self.root / clip.streams[stream]

    def clip(self, clip_id: str) -> ClipEntry:
        for c in self.clips:
            if c.id == clip_id:
                return c
        raise ManifestError(f"no clip {clip_id!r} in manifest {self.root}")

    def ids(self) -> list[str]:
        return [c.id for c in self.clips]

    def to_json(self) -> str:
        body = {"version": self.version, "synthesis": self.synthesis,
                "clips": [c.to_dict() for c in self.clips]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    def validate(self) -> "Manifest":
        for clip in self.clips:
            for stream in clip.streams:
                n = stream_length(self.path_of(clip, stream))
                if n != clip.n_frames:
                    raise ManifestError(
                        f"clip {clip.id}: stream {stream!r} has {n} frames, expected {clip.n_frames}")
        return self


def stream_length(path: Path) -> int:
    if not path.exists():
        raise ManifestError(f"referenced file {path} does not exist")
    if path.is_dir():
        return sum(1 for p in path.iterdir() if re.fullmatch(r"\d+", p.stem) and p.suffix)
    if path.suffix == ".json":
        return len(json.loads(path.read_text()))
    raise ManifestError(f"unsupported stream file {path}")


def load_manifest(path: str | Path, check: bool = True) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        body = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
    if not isinstance(body, dict) or "version" not in body:
        raise ManifestError(f"manifest {path} lacks a version field")
    if body["version"] != MANIFEST_VERSION:
        raise ManifestError(f"manifest {path} has unsupported version {body['version']}")
    try:
        clips = [ClipEntry(c["id"], int(c["n_frames"]), dict(c["streams"]), c.get("digest", ""),
                           dict(c.get("params", {})))
                 for c in body.get("clips", [])]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"manifest {path} has a malformed clip entry: {exc}") from None
    m = Manifest(path.parent, clips, body.get("synthesis", {}), body["version"])
    return m.validate() if check else m

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

from kahs.utils import StrPath, sha256sum

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """What a command was run with and what it wrote.

    Inputs are recorded by SHA-256, outputs relative to the output directory.
    No timestamps: identical runs produce identical manifests.
    """

    command: str
    config: dict[str, Any]
    seed: int
    version: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    notes: dict[str, str] = field(default_factory=dict)

    @classmethod
    def for_run(
        cls,
        command: str,
        config: dict[str, Any],
        seed: int,
        version: str,
        inputs: Iterable[StrPath] = (),
        outputs: Iterable[StrPath] = (),
        out_dir: StrPath = ".",
        notes: dict[str, str] | None = None,
    ) -> RunManifest:
        out_dir = Path(out_dir)
        return cls(
            command=command,
            config=config,
            seed=seed,
            version=version,
            inputs={str(p): sha256sum(p) for p in inputs},
            outputs=sorted(_relative(Path(p), out_dir) for p in outputs),
            notes=notes or {},
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: StrPath) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_json().encode("utf-8"))
        return path

    @classmethod
    def load(cls, path: StrPath) -> RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = json.loads(path.read_text(encoding="utf-8"))
        try:
            return cls(**data)
        except TypeError as e:
            raise ValueError(f"{path} is not a run manifest ({e})") from e

    def verify_inputs(self) -> list[str]:
        """Inputs whose checksum no longer matches."""
        return [p for p, digest in self.inputs.items() if sha256sum(p) != digest]


def _relative(path: Path, root: Path) -> str:
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return path.as_posix()

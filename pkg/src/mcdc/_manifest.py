"""
The manifest written next to the artifacts of every command. Its metadata lines are `#` comments and its
settings are `key = value` lines, so a manifest can be passed back as `--config` to repeat the run.
"""

import datetime
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

from ._config import RunConfig
from ._export import format_key_values

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.cfg"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: RunConfig
    started: str = field(default_factory=_now)
    finished: t.Optional[str] = None

    #: Artifact kind (e.g. `checkpoint`, `metrics`) to path.
    artifacts: t.Dict[str, str] = field(default_factory=dict)

    def add_artifact(self, kind: str, path: t.Union[str, Path]) -> None:
        self.artifacts[kind] = str(path)

    def finish(self) -> None:
        self.finished = _now()

    def render(self) -> str:
        lines = [
            f"# mcdc manifest version {MANIFEST_VERSION}",
            f"# command = {self.command}",
            f"# started = {self.started}",
            f"# finished = {self.finished or ''}",
            *(f"# artifact.{kind} = {path}" for kind, path in self.artifacts.items()),
        ]
        return "\n".join(lines) + "\n" + format_key_values(self.config.to_items())


def write_manifest(manifest: RunManifest, out_dir: t.Union[str, Path]) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_bytes(manifest.render().encode("utf-8"))
    return path

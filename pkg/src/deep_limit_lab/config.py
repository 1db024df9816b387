"""Study configuration files and run manifests.

Configs are flat key=value text in sections ([study], [field], [sweep], ...)
parsed with the stdlib parser, no interpolation.  A run manifest records the
config hash, tool version, and every file the study wrote; manifests are
written atomically so a crashed run never leaves a truncated one behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from configparser import ConfigParser
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

__all__ = ["StudyConfig", "RunManifest", "load_config", "write_atomic", "UsageError"]


class UsageError(Exception):
    """Bad invocation or unreadable config; maps to exit code 2."""


@dataclass(frozen=True)
class StudyConfig:
    """Parsed study file: kind plus typed per-section dictionaries."""

    kind: str
    sections: dict
    source_text: str
    source_path: str

    VALID_KINDS = ("trajectory", "sde-couple", "fp", "annuli")

    def get(self, section: str, key: str, cast=str, default=None):
        sec = self.sections.get(section, {})
        if key not in sec:
            if default is None:
                raise UsageError(f"config is missing [{section}] {key}")
            return default
        raw = sec[key]
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for [{section}] {key}: {raw!r}") from exc

    def get_int_list(self, section: str, key: str, default=None):
        raw = self.get(section, key, str, default)
        if isinstance(raw, (list, tuple)):
            return [int(v) for v in raw]
        try:
            return [int(v) for v in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise UsageError(f"bad integer list for [{section}] {key}: {raw!r}") from exc

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()


def load_config(path) -> StudyConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text()
    parser = ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except Exception as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    kind = sections.get("study", {}).get("kind")
    if kind not in StudyConfig.VALID_KINDS:
        raise UsageError(
            f"[study] kind must be one of {StudyConfig.VALID_KINDS}, got {kind!r}"
        )
    return StudyConfig(kind, sections, text, str(path))


def write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class RunManifest:
    """What a study produced; one manifest owns each output file."""

    study_kind: str
    config_sha256: str
    tool_version: str = __version__
    created_utc: str = ""
    outputs: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def add(self, path) -> None:
        self.outputs.append(str(Path(path).name))

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        self.created_utc = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        payload = {
            "study_kind": self.study_kind,
            "config_sha256": self.config_sha256,
            "tool_version": self.tool_version,
            "created_utc": self.created_utc,
            "outputs": sorted(self.outputs),
            "params": self.params,
        }
        path = out_dir / "manifest.json"
        write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    @staticmethod
    def read(path) -> dict:
        return json.loads(Path(path).read_text())

"""Run configuration: key-value files, effective-config dumps and seed fan-out."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from barcodemlm import __version__
from barcodemlm.corpus import ConfigError

SECTION = "run"


def stage_seed(global_seed: int, stage: str) -> int:
    """Per-stage seed: ``(global_seed + first 8 hex digits of sha256(stage)) mod 2**31``.

    Re-running one stage alone therefore reproduces the seed it had inside a
    full pipeline run.
    """
    offset = int(hashlib.sha256(stage.encode("utf-8")).hexdigest()[:8], 16)
    return (int(global_seed) + offset) % 2**31


def read_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; a ``[run]`` section header is optional."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = f"[{SECTION}]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: dict[str, str] = {}
    for section in parser.sections():
        out.update(parser[section])
    return {k.replace("-", "_"): v for k, v in out.items()}


@dataclass
class RunConfig:
    command: str
    seed: int
    out: str
    params: dict = field(default_factory=dict)

    def write(self, directory: str | Path) -> Path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser[SECTION] = {
            "command": self.command,
            "seed": str(self.seed),
            "version": __version__,
            **{k: "" if v is None else str(v) for k, v in sorted(self.params.items())},
        }
        path = Path(directory) / "run_config.ini"
        with open(path, "w") as fh:
            parser.write(fh)
        return path

"""Runtime configuration.

One flat config object shared by the CLI and the service: dataset
location, patch size, hint width mode, refinement backend spec, seed,
interaction cap, and service port. Values come from defaults, then an
optional TOML file, then explicit flag overrides — later sources win.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .strokes import WIDTH_MODES

__all__ = ["Config", "load_config"]

BACKENDS = ("identity", "heuristic", "oracle")


@dataclass
class Config:
    dataset_root: str = "."
    patch_size: int = 512
    width_mode: str = "conservative"
    backend: str = "heuristic"
    seed: int = 0
    cap: int = 3000
    port: int = 8000

    def validate(self) -> "Config":
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.width_mode not in WIDTH_MODES:
            raise ValueError(
                f"width_mode {self.width_mode!r} not one of {WIDTH_MODES}")
        if self.backend not in BACKENDS and not self.backend.startswith("remote:"):
            raise ValueError(
                f"backend {self.backend!r}; expected one of {BACKENDS} or remote:<url>")
        if self.backend == "remote:":
            raise ValueError("remote backend needs a URL after 'remote:'")
        if self.cap < 1:
            raise ValueError(f"cap must be >= 1, got {self.cap}")
        if not (1 <= self.port <= 65535):
            raise ValueError(f"port {self.port} out of range")
        return self


def load_config(path=None, **overrides) -> Config:
    """Defaults, then a TOML file, then keyword overrides (None skipped)."""
    values: dict = {}
    known = {f.name for f in fields(Config)}
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for key, value in overrides.items():
        if key not in known:
            raise ValueError(f"unknown config key: {key}")
        if value is not None:
            values[key] = value
    return Config(**values).validate()

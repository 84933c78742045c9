"""
Where mapwave keeps its user config, and access to the packaged defaults.
"""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path
from typing import Dict


HOME_ENV = "MAPWAVE_HOME"
DEFAULT_CONFIG = "default_config.yaml"
RESOURCE_PACKAGE = "mapwave_resources"


def app_support_dir() -> Path:
    """$MAPWAVE_HOME, else $XDG_CONFIG_HOME/mapwave, else ~/.config/mapwave."""
    override = os.getenv(HOME_ENV)
    if override:
        return Path(override).expanduser()
    base = os.getenv("XDG_CONFIG_HOME")
    return (Path(base).expanduser() if base else Path.home() / ".config") / "mapwave"


def config_path() -> Path:
    return app_support_dir() / "config.yaml"


def read_resource_text(name: str = DEFAULT_CONFIG) -> str:
    return resources.files(RESOURCE_PACKAGE).joinpath(name).read_text(encoding="utf-8")


def ensure_default_config() -> Path:
    """Copy the packaged defaults to the user config path unless one exists."""
    target = config_path()
    if not target.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(read_resource_text(DEFAULT_CONFIG), encoding="utf-8")
    return target


def describe_paths() -> Dict[str, Path]:
    return {
        "home": app_support_dir(),
        "config": config_path(),
        "defaults": Path(str(resources.files(RESOURCE_PACKAGE).joinpath(DEFAULT_CONFIG))),
    }

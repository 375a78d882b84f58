"""Flat ``section.key = value`` config files covering every config dataclass.

Example::

    # comments start with '#'
    stiqa.epochs = 50
    controller.lam = 5
    neural.channels = 48

Unknown sections or keys are errors, so typos do not pass silently.
"""

from __future__ import annotations

import configparser
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict

from .codec.neural import NeuralCodecConfig
from .controller import ControllerConfig
from .stiqa.model import StiqaConfig

SECTIONS = {
    "stiqa": StiqaConfig,
    "controller": ControllerConfig,
    "neural": NeuralCodecConfig,
}


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str) -> Dict[str, object]:
    """Parse config text into one dataclass instance per section (defaults for
    sections that are absent)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[root]\n" + text)
    overrides: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    for key, raw in parser["root"].items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ValueError(f"unknown config key {key!r}; expected one of {sorted(SECTIONS)} as prefix")
        overrides[section][name] = raw
    out = {}
    for section, cls in SECTIONS.items():
        base = cls()
        known = {f.name for f in fields(cls)}
        values = {}
        for name, raw in overrides[section].items():
            if name not in known:
                raise ValueError(f"unknown key {section}.{name}")
            values[name] = _coerce(raw.strip(), getattr(base, name))
        out[section] = replace(base, **values)
    return out


def load_config(path=None) -> Dict[str, object]:
    if path is None:
        return parse_config("")
    return parse_config(Path(path).read_text())


def dump_config(configs: Dict[str, object]) -> str:
    lines = []
    for section, cfg in configs.items():
        for f in fields(cfg):
            lines.append(f"{section}.{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"

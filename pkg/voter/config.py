# voter/config.py
"""
Flat run-configuration files.

    # comment
    model.F = 3
    model.theta = 1
    density.kind = symmetric
    density.rho2 = 1/20
    observers.times = 0, 1, 2, 4
    seed = 7

Values are read as int, then Fraction, then string; a comma makes a list.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError

from .core import DensityVector, Graph, Params, StopCondition

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ('csv', 'ppm')


def parse_value(raw: str):
    text = raw.strip()
    if ',' in text:
        return [parse_value(item) for item in text.split(',') if item.strip()]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        return text


def _assign(tree: Dict[str, Any], key: str, value, origin: str):
    parts = key.strip().split('.')
    if not all(parts) or len(parts) > 2:
        raise ValidationError(f"{origin}: malformed key {key!r}", code='invalid_config')
    if len(parts) == 1:
        if isinstance(tree.get(parts[0]), dict):
            raise ValidationError(f"{origin}: {key!r} is a section", code='invalid_config')
        tree[parts[0]] = value
        return
    section = tree.setdefault(parts[0], {})
    if not isinstance(section, dict):
        raise ValidationError(f"{origin}: {parts[0]!r} is not a section", code='invalid_config')
    section[parts[1]] = value


def parse_config_text(text: str, source: str = '<config>') -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ValidationError(f"{source}:{number}: expected 'key = value'", code='invalid_config')
        key, raw = stripped.split('=', 1)
        _assign(tree, key, parse_value(raw), f"{source}:{number}")
    return tree


def set_key(tree: Dict[str, Any], key: str, value) -> Dict[str, Any]:
    """Set a dotted key to an already parsed value."""
    _assign(tree, key, value, key)
    return tree


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ValidationError(f"Cannot read config {path}: {e}", code='invalid_config')
    logger.debug(f"Loaded run configuration from {path}")
    return parse_config_text(text, str(path))


def apply_overrides(tree: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply `section.key=value` strings on top of a parsed tree."""
    for item in overrides or ():
        if '=' not in item:
            raise ValidationError(f"--set expects section.key=value, got {item!r}", code='invalid_config')
        key, raw = item.split('=', 1)
        _assign(tree, key, parse_value(raw), '--set')
    return tree


def to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def canonical_json(tree: Dict[str, Any]) -> str:
    return json.dumps(to_jsonable(tree), sort_keys=True, separators=(',', ':'))


def config_hash(tree: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(tree).encode('utf-8')).hexdigest()


def geometric_times(t_max: float) -> Tuple[float, ...]:
    """0, 1, 2, 4, ... up to t_max, with t_max itself last."""
    times = [0.0]
    t = 1.0
    while t < t_max:
        times.append(t)
        t *= 2
    if t_max > 0:
        times.append(float(t_max))
    return tuple(times)


@dataclass(frozen=True)
class RenderOptions:
    rows: int = 600
    interfaces: bool = False


@dataclass(frozen=True)
class RunConfig:
    params: Params
    density: DensityVector
    graph: Graph
    stop: StopCondition
    replicates: int
    seed: int
    times: Tuple[float, ...] = ()
    quantities: Tuple[str, ...] = ()
    pairs: Tuple[Tuple[int, int], ...] = ()
    output_dir: Optional[str] = None
    formats: Tuple[str, ...] = OUTPUT_FORMATS
    render: RenderOptions = field(default_factory=RenderOptions)

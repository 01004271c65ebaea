# voter/reporting.py
"""
Artifact output: CSV tables and the per-run manifest.

Floats are written with 12 significant digits, Fractions as "p/q",
booleans as true/false. Lines end with LF whatever the platform.
"""
import csv
import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import django
import networkx
import numba
import numpy as np
import scipy
import sympy

from . import __version__
from .config import OUTPUT_FORMATS, to_jsonable
from .service import SimulationException

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 12
MANIFEST_NAME = 'manifest.json'


def format_value(value) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{SIGNIFICANT_DIGITS}g}"
    return str(value)


def decimal(value) -> str:
    """Decimal rendering of an exact rational, for the column next to its p/q form."""
    return format_value(float(value))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    try:
        with path.open('w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                if len(row) != len(header):
                    raise SimulationException(
                        f"Row of {len(row)} fields does not match the {len(header)} columns of {path.name}",
                        code='bad_table',
                        details={'path': str(path)},
                    )
                writer.writerow([format_value(value) for value in row])
    except OSError as e:
        raise SimulationException(f"Cannot write {path}: {e}", code='io_error', details={'path': str(path)})
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(encoding='utf-8', newline='') as handle:
        return list(csv.DictReader(handle))


def tool_versions() -> Dict[str, str]:
    return {
        'voter': __version__,
        'python': platform.python_version(),
        'django': django.get_version(),
        'numpy': np.__version__,
        'numba': numba.__version__,
        'scipy': scipy.__version__,
        'networkx': networkx.__version__,
        'sympy': sympy.__version__,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class ArtifactWriter:
    """
    Single writer for one output directory. Every file goes through here
    so the manifest lists exactly what was produced.
    """
    directory: Path
    formats: Sequence[str] = OUTPUT_FORMATS
    artifacts: List[Path] = field(default_factory=list)

    def __post_init__(self):
        self.directory = Path(self.directory)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise SimulationException(f"Cannot create {self.directory}: {e}", code='io_error',
                                      details={'path': str(self.directory)})

    def _track(self, path: Path) -> Path:
        self.artifacts.append(path)
        logger.info(f"Wrote {path}")
        return path

    def wants(self, name: str) -> bool:
        """Whether `name` is of an output format this run asked for"""
        return Path(name).suffix.lstrip('.') in self.formats

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Optional[Path]:
        if not self.wants(name):
            logger.debug(f"Skipping {name}: csv output not requested")
            return None
        return self._track(write_csv(self.directory / name, header, rows))

    def binary(self, name: str, data: bytes) -> Optional[Path]:
        if not self.wants(name):
            logger.debug(f"Skipping {name}: not among the requested formats")
            return None
        path = self.directory / name
        try:
            path.write_bytes(data)
        except OSError as e:
            raise SimulationException(f"Cannot write {path}: {e}", code='io_error', details={'path': str(path)})
        return self._track(path)

    def manifest(self, subcommand: str, config: Dict[str, Any], config_hash: str, seed: Optional[int],
                 summary: Optional[Dict[str, Any]] = None, caveats: Sequence[str] = ()) -> Path:
        """Enough to reproduce the run: config, hash, seed and tool versions."""
        document = {
            'subcommand': subcommand,
            'config': to_jsonable(config),
            'config_hash': config_hash,
            'master_seed': seed,
            'versions': tool_versions(),
            'created_at': datetime.now(timezone.utc).isoformat(),
            'artifacts': [
                {'name': path.name, 'sha256': _sha256(path), 'bytes': path.stat().st_size}
                for path in self.artifacts
            ],
            'caveats': list(caveats),
            'summary': to_jsonable(summary or {}),
        }
        path = self.directory / MANIFEST_NAME
        try:
            path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        except OSError as e:
            raise SimulationException(f"Cannot write {path}: {e}", code='io_error', details={'path': str(path)})
        logger.info(f"Manifest written to {path}")
        return path

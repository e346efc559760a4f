"""
rpprec Utility Functions
Seed derivation, config files and small file helpers.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Union

from .exceptions import ConfigError

PathLike = Union[str, "os.PathLike[str]"]

SEED_STREAMS = (
    'dataset',
    'candidates',
    'policy-init',
    'sampling',
    'simulator',
    'encoder',
    'enumeration',
)


def derive_seed(master: int, *names: Any) -> int:
    """Derive a named 63-bit sub-seed from the master seed.

    ``derive_seed(7, 'sampling', 3)`` hashes ``"7:sampling:3"``; distinct
    names never share a stream, whatever order they are requested in.
    """
    key = ':'.join([str(int(master))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big') >> 1


def named_seeds(master: int) -> Dict[str, int]:
    """Return every named sub-seed used by a run (for the config snapshot)."""
    return {name: derive_seed(master, name) for name in SEED_STREAMS}


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Read a JSON config file of ``RPP_*`` keys."""
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc

    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    bad = sorted(k for k in data if not str(k).startswith('RPP_'))
    if bad:
        raise ConfigError(f"config file {path} has non-RPP keys: {', '.join(bad)}")
    return data


def write_text(path: PathLike, text: str) -> Path:
    """Write text with a trailing newline, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if not text.endswith('\n'):
        text += '\n'
    with open(target, 'w', encoding='utf-8', newline='\n') as fh:
        fh.write(text)
    return target


def dump_json(data: Any) -> str:
    """Canonical JSON used for every deterministic artifact."""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False)

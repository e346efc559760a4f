"""
rpprec Run Monitor
Process resource and accounting snapshot written next to each run.
"""

from __future__ import annotations

import logging
import platform
import time
from typing import Any, Dict, Optional

from .utils import dump_json, write_text

logger = logging.getLogger(__name__)


class RunMonitor:
    """
    Tracks one CLI run: wall-clock duration, process resources and the
    env-call and failure counts reported by the components.

    psutil is optional at runtime; without it the resource section only
    reports that it is unavailable.
    """

    def __init__(self, config: Dict[str, Any], command: str = ''):
        self.config = config
        self.command = command
        self.start_time = time.time()
        self.counters: Dict[str, int] = {}

        self.psutil_available = False
        try:
            import psutil
            self.psutil = psutil
            self.psutil_available = True
        except ImportError:
            self.psutil = None

    def record(self, name: str, value: int) -> None:
        self.counters[name] = int(value)

    def _get_system_info(self) -> Dict[str, Any]:
        return {
            'platform': platform.platform(),
            'machine': platform.machine(),
            'python_version': platform.python_version(),
            'hostname': platform.node(),
        }

    def _get_process_stats(self) -> Dict[str, Any]:
        if not self.psutil_available:
            return {'available': False}
        try:
            proc = self.psutil.Process()
            cpu = proc.cpu_times()
            mem = proc.memory_info()
            return {
                'available': True,
                'rss_bytes': int(mem.rss),
                'cpu_user_seconds': float(cpu.user),
                'cpu_system_seconds': float(cpu.system),
                'threads': proc.num_threads(),
            }
        except Exception as exc:
            return {'available': False, 'error': str(exc)}

    def _format_uptime(self, seconds: float) -> str:
        """Format a duration as e.g. ``1h 2m 5s``."""
        days = int(seconds // 86400)
        hours = int((seconds % 86400) // 3600)
        minutes = int((seconds % 3600) // 60)
        seconds = int(seconds % 60)

        parts = []
        if days > 0:
            parts.append(f"{days}d")
        if hours > 0:
            parts.append(f"{hours}h")
        if minutes > 0:
            parts.append(f"{minutes}m")
        if seconds > 0 or not parts:
            parts.append(f"{seconds}s")
        return " ".join(parts)

    def snapshot(self, log_summary: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        duration = time.time() - self.start_time
        return {
            'command': self.command,
            'started_at': self.start_time,
            'duration_seconds': round(duration, 3),
            'duration_formatted': self._format_uptime(duration),
            'system': self._get_system_info(),
            'process': self._get_process_stats(),
            'counters': dict(sorted(self.counters.items())),
            'log': dict(log_summary or {}),
        }

    def write(self, path: str, log_summary: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        info = self.snapshot(log_summary)
        write_text(path, dump_json(info))
        logger.debug("Run info written to %s", path)
        return info


__all__ = ['RunMonitor']

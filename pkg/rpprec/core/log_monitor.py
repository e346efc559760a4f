"""
rpprec Log Monitor
Captures package logging into run.log and keeps bounded per-source buffers.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from typing import Any, Deque, Dict, Optional

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
PROBLEM_LEVELS = ('WARNING', 'ERROR', 'CRITICAL')


class LogMonitor:
    """
    Run-scoped log capture for rpprec.

    Attaches one handler to the ``rpprec`` logger that mirrors every record
    into ``run.log`` and into an in-memory buffer per source. Sources are
    derived from logger names through prefix aliases so that
    ``rpprec.core.marl`` shows up as ``marl``. The buffers feed the
    ``log`` section of run_info.json.
    """

    def __init__(self, config: Dict[str, Any], log_path: Optional[str] = None,
                 logger_name: str = 'rpprec'):
        self.config = config
        self.max_entries = int(config.get('RPP_MAX_LOG_ENTRIES', 1000))
        self.level = logging.getLevelName(str(config.get('RPP_LOG_LEVEL', 'INFO')).upper())
        if not isinstance(self.level, int):
            self.level = logging.INFO
        self.log_path = log_path
        self.logger_name = logger_name
        self.log_buffers: Dict[str, Deque[Dict[str, Any]]] = {}
        self.level_counts: Dict[str, int] = {}
        self.logger_aliases = {
            'rpprec.core.marl': 'marl',
            'rpprec.core.llm_env': 'environment',
            'rpprec.core.evaluation': 'evaluation',
            'rpprec.core.dataset': 'dataset',
            'rpprec.core.actions': 'actions',
            'rpprec.core.state_encoder': 'encoder',
            'rpprec.cli': 'cli',
            'rpprec': 'rpprec',
        }
        self._lock = threading.Lock()
        self._handler = RunLogHandler(self)
        self._handler.setLevel(logging.DEBUG)
        self._file_handler: Optional[logging.FileHandler] = None
        self._attached = False
        self._saved_level = logging.NOTSET
        self._seq = 0

    def attach(self) -> "LogMonitor":
        """Start capturing; opens run.log when a path was given."""
        if self._attached:
            return self
        target = logging.getLogger(self.logger_name)
        self._saved_level = target.level
        if target.level == logging.NOTSET or target.level > self.level:
            target.setLevel(self.level)
        target.addHandler(self._handler)
        if self.log_path:
            os.makedirs(os.path.dirname(os.path.abspath(self.log_path)), exist_ok=True)
            self._file_handler = logging.FileHandler(self.log_path, mode='w', encoding='utf-8')
            self._file_handler.setLevel(self.level)
            self._file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            target.addHandler(self._file_handler)
        self._attached = True
        return self

    def detach(self) -> None:
        if not self._attached:
            return
        target = logging.getLogger(self.logger_name)
        target.removeHandler(self._handler)
        target.setLevel(self._saved_level)
        if self._file_handler is not None:
            target.removeHandler(self._file_handler)
            self._file_handler.close()
            self._file_handler = None
        self._attached = False

    def __enter__(self) -> "LogMonitor":
        return self.attach()

    def __exit__(self, *exc_info) -> None:
        self.detach()

    def add_log_entry(self, source: str, level: str, message: str) -> None:
        with self._lock:
            self._seq += 1
            entry = {
                'seq': self._seq,
                'timestamp': time.time(),
                'source': source,
                'level': level.upper(),
                'message': message,
            }
            buffer = self.log_buffers.get(source)
            if buffer is None:
                buffer = self.log_buffers[source] = deque(maxlen=self.max_entries)
            buffer.append(entry)
            self.level_counts[entry['level']] = self.level_counts.get(entry['level'], 0) + 1

    def summary(self, max_problems: int = 10) -> Dict[str, Any]:
        """Level totals, buffered entries per source and the newest warnings and errors."""
        with self._lock:
            problems = sorted(
                (entry for buffer in self.log_buffers.values() for entry in buffer
                 if entry['level'] in PROBLEM_LEVELS),
                key=lambda entry: entry['seq'],
            )
            return {
                'warnings': self.level_counts.get('WARNING', 0),
                'errors': self.level_counts.get('ERROR', 0) + self.level_counts.get('CRITICAL', 0),
                'total': sum(self.level_counts.values()),
                'sources': {source: len(buffer) for source, buffer in sorted(self.log_buffers.items())},
                'problems': [
                    f"{entry['source']} {entry['level']}: {entry['message']}"
                    for entry in problems[-max_problems:]
                ] if max_problems > 0 else [],
            }

    def _derive_source_from_logger(self, logger_name: str) -> str:
        # longest prefix wins so package aliases do not shadow module aliases
        for prefix in sorted(self.logger_aliases, key=len, reverse=True):
            if logger_name == prefix or logger_name.startswith(prefix + '.'):
                return self.logger_aliases[prefix]
        return logger_name.split('.')[-1] if logger_name else 'rpprec'


class RunLogHandler(logging.Handler):
    """Feeds log records into a LogMonitor."""

    def __init__(self, log_monitor: LogMonitor):
        super().__init__()
        self.log_monitor = log_monitor

    def emit(self, record: logging.LogRecord) -> None:
        try:
            source = self.log_monitor._derive_source_from_logger(record.name)
            self.log_monitor.add_log_entry(source=source, level=record.levelname, message=record.getMessage())
        except Exception:
            self.handleError(record)


__all__ = ['LOG_FORMAT', 'PROBLEM_LEVELS', 'LogMonitor', 'RunLogHandler']

# Run artifact storage
# Run-scoped files written by `zkiot run` and read back by `zkiot inspect`.

import json
import logging
import os
import tempfile
import threading
from typing import Any

from common import config
from common.errors import NotFound

logger = logging.getLogger(__name__)

TRANSCRIPT_FILE = 'transcript.log'
LEDGER_FILE = 'ledger.dump'
ESCROW_FILE = 'escrow.dump'
SESSIONS_FILE = 'sessions.json'
METRICS_FILE = 'metrics.json'
CHAIN_SUFFIX = '.chain'


class RunStore:
    """Atomic writes (temp file, then rename) of the artifacts of one run."""

    def __init__(self, run_dir: str = config.RUN_DIR):
        self.run_dir = run_dir
        self.lock = threading.Lock()

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def _write(self, name: str, data: bytes):
        with self.lock:
            os.makedirs(self.run_dir, exist_ok=True)
            temp_fd, temp_path = tempfile.mkstemp(dir=self.run_dir, suffix='.tmp')
            try:
                with os.fdopen(temp_fd, 'wb') as f:
                    f.write(data)
                os.replace(temp_path, self.path(name))
            except Exception:
                try:
                    os.unlink(temp_path)
                except OSError:
                    pass
                logger.error(f"Error saving {self.path(name)}")
                raise

    def _read(self, name: str) -> bytes:
        try:
            with open(self.path(name), 'rb') as f:
                return f.read()
        except FileNotFoundError as e:
            raise NotFound(f"Run artifact '{self.path(name)}' is missing") from e

    # Text artifacts
    def save_text(self, name: str, text: str):
        self._write(name, text.encode('utf-8'))

    def load_text(self, name: str) -> str:
        return self._read(name).decode('utf-8')

    # JSON artifacts
    def save_json(self, name: str, data: Any):
        self._write(name, (json.dumps(data, indent=2, sort_keys=True) + "\n").encode('utf-8'))

    def load_json(self, name: str) -> Any:
        try:
            return json.loads(self._read(name).decode('utf-8'))
        except json.JSONDecodeError as e:
            raise NotFound(f"Run artifact '{self.path(name)}' is not valid JSON: {e}") from e

    # Binary artifacts (chain files)
    def save_bytes(self, name: str, data: bytes):
        self._write(name, data)

    def load_bytes(self, name: str) -> bytes:
        return self._read(name)

    def save_run(self, transcript: str, ledger: str, escrow: str, sessions: list[dict], metrics: dict,
                 chains: dict[str, bytes] | None = None):
        self.save_text(TRANSCRIPT_FILE, transcript)
        self.save_text(LEDGER_FILE, ledger)
        self.save_text(ESCROW_FILE, escrow)
        self.save_json(SESSIONS_FILE, sessions)
        self.save_json(METRICS_FILE, metrics)
        for session_id, data in (chains or {}).items():
            self.save_bytes(session_id + CHAIN_SUFFIX, data)
        logger.info(f"Run artifacts written to {self.run_dir}")

    def exists(self) -> bool:
        return os.path.exists(self.path(TRANSCRIPT_FILE))

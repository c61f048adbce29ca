"""
运行记录 (Run ledger): append-only JSON lines of completed runs.

Writers take an exclusive lock on the ledger file; readers a shared one.
"""
import fcntl
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

from utils.errors import ConfigError


@dataclass
class LedgerEntry:
    config_hash: str
    stage: str
    artifacts: List[str] = field(default_factory=list)
    secs: float = 0.0
    finished_at: float = field(default_factory=time.time)


class RunLedger:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)

    @contextmanager
    def _locked(self, mode: str, lock: int) -> Iterator:
        with open(self.path, mode, encoding="utf-8") as f:
            fcntl.flock(f.fileno(), lock)
            try:
                yield f
            finally:
                fcntl.flock(f.fileno(), fcntl.LOCK_UN)

    def entries(self) -> List[LedgerEntry]:
        out = []
        with self._locked("r", fcntl.LOCK_SH) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(LedgerEntry(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as e:
                    logging.warning(f"skipping unreadable ledger line {lineno} in {self.path}: {e}")
        return out

    def find(self, config_hash: str, stage: str) -> Optional[LedgerEntry]:
        """Latest completed entry whose artifacts all still exist."""
        for entry in reversed(self.entries()):
            if entry.config_hash == config_hash and entry.stage == stage:
                if all(Path(a).exists() for a in entry.artifacts):
                    return entry
                logging.warning(f"ledger entry {config_hash[:12]}/{stage} lists missing artifacts; it will be rerun")
                return None
        return None

    def record(self, config_hash: str, stage: str, artifacts: List[str | Path], secs: float) -> LedgerEntry:
        if not config_hash:
            raise ConfigError("a ledger entry needs a config hash")
        entry = LedgerEntry(config_hash, stage, [str(a) for a in artifacts], float(secs))
        with self._locked("a", fcntl.LOCK_EX) as f:
            f.write(json.dumps(asdict(entry), sort_keys=True) + "\n")
            f.flush()
        return entry

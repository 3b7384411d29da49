import hashlib
import json
import logging
import os
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from ext.base_handler import BaseLockHandler
from ext.constants import (
    CONFIG_FILE,
    SIGNAL_STATS_FILE,
    TRANSCRIPTS_DIR,
    TRIALS_FILE,
    VERDICT_FILE,
    ConfigMismatch,
)

logger = logging.getLogger(__name__)


def canonical_json(data: Dict) -> str:
    """The one serialisation that config hashes are computed over"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def config_hash(data: Dict) -> str:
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def write_json_once(path: Path, data: Dict, max_retries: int = 3):
    """
    Write ``data`` atomically (temp file + rename)

    Args:
        path: destination
        data: JSON-serialisable payload
        max_retries: attempts on transient OS errors
    """
    tmp = path.with_suffix(path.suffix + '.tmp')
    for attempt in range(max_retries):
        try:
            with open(tmp, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, sort_keys=True)
                f.write('\n')
            os.replace(tmp, path)
            return
        except OSError as e:
            if attempt == max_retries - 1:
                logger.error(f"Failed to write {path} after {max_retries} attempts: {e}")
                raise
            logger.warning(f"Write attempt {attempt + 1} for {path} failed, retrying... Error: {e}")
            time.sleep(0.1 * (attempt + 1))


@dataclass
class RunSnapshot:
    """Everything persisted in one run directory"""
    run_dir: Path
    config: Dict
    config_hash: str
    run_id: str
    trials: List[Dict] = field(default_factory=list)
    verdict: Optional[Dict] = None

    @property
    def completed(self) -> bool:
        return self.verdict is not None


class RunStore(BaseLockHandler):
    """
    Append-only persistence for one calibration run

    Layout: config.json (canonical config + hash, written once), trials.jsonl
    (one TrialRecord per line), verdict.json, signal_stats.json, transcripts/.
    """

    def __init__(self, run_dir):
        super().__init__()
        self.run_dir = Path(run_dir)
        self.logger = logging.getLogger("RunStore")

    @property
    def config_path(self) -> Path:
        return self.run_dir / CONFIG_FILE

    @property
    def trials_path(self) -> Path:
        return self.run_dir / TRIALS_FILE

    @property
    def verdict_path(self) -> Path:
        return self.run_dir / VERDICT_FILE

    @property
    def transcript_path(self) -> Path:
        return self.run_dir / TRANSCRIPTS_DIR / 'judge.jsonl'

    def setup(self, config: Dict) -> Dict:
        """
        Create the run directory, or verify it belongs to this config

        Returns:
            The stored header ({config, config_hash, run_id, created_at})

        Raises:
            ConfigMismatch: the directory holds a run with a different config hash
        """
        digest = config_hash(config)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        if self.config_path.exists():
            header = self.read_header()
            if header['config_hash'] != digest:
                raise ConfigMismatch(
                    f"{self.run_dir} was created with config {header['config_hash'][:12]}, "
                    f"current config hashes to {digest[:12]}"
                )
            self.logger.info(f"Resuming run {header['run_id']} in {self.run_dir}")
            self._repair_tail()
            return header

        header = {
            'config': config,
            'config_hash': digest,
            'run_id': uuid.uuid4().hex[:12],
            'created_at': datetime.now(timezone.utc).isoformat(),
        }
        write_json_once(self.config_path, header)
        self.logger.info(f"Created run {header['run_id']} in {self.run_dir}")
        return header

    def _repair_tail(self):
        """Cut an unterminated last line left behind by an interrupted append"""
        if not self.trials_path.exists():
            return
        with open(self.trials_path, 'rb+') as f:
            data = f.read()
            if not data or data.endswith(b'\n'):
                return
            keep = data.rfind(b'\n') + 1
            f.truncate(keep)
        self.logger.warning(f"{self.trials_path}: dropped {len(data) - keep} bytes of an incomplete trial line")

    def read_header(self) -> Dict:
        with open(self.config_path, 'r', encoding='utf-8') as f:
            return json.load(f)

    async def append_trial(self, record: Dict):
        """Single-writer append of one trial line"""
        async with self.locked('trials'):
            with open(self.trials_path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(record, sort_keys=True) + '\n')
                f.flush()

    def load_trials(self) -> List[Dict]:
        if not self.trials_path.exists():
            return []
        trials = []
        with open(self.trials_path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    trials.append(json.loads(line))
                except json.JSONDecodeError:
                    self.logger.warning(f"{self.trials_path}: skipping unreadable line {line_no}")
        return trials

    def write_verdict(self, verdict: Dict):
        write_json_once(self.verdict_path, verdict)

    def load_verdict(self) -> Optional[Dict]:
        if not self.verdict_path.exists():
            return None
        with open(self.verdict_path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def write_signal_stats(self, stats: Dict):
        path = self.run_dir / SIGNAL_STATS_FILE
        if not path.exists():
            write_json_once(path, stats)

    def snapshot(self) -> RunSnapshot:
        header = self.read_header()
        return RunSnapshot(
            run_dir=self.run_dir,
            config=header['config'],
            config_hash=header['config_hash'],
            run_id=header['run_id'],
            trials=self.load_trials(),
            verdict=self.load_verdict(),
        )


def discover_runs(paths) -> List[Path]:
    """Run directories among ``paths`` and their immediate subdirectories"""
    found = []
    for path in map(Path, paths):
        if (path / CONFIG_FILE).exists():
            found.append(path)
        elif path.is_dir():
            found.extend(sorted(p for p in path.iterdir() if (p / CONFIG_FILE).exists()))
    return found

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from src.utils.storage import write_json


@dataclass
class TrainingStats:
    """Statistics about the training process."""
    epochs_completed: int = 0
    steps: int = 0
    best_loss: float = float('inf')
    epoch_losses: List[float] = field(default_factory=list)
    start_time: float = field(default_factory=time.time)


@dataclass
class RunManifest:
    """Everything needed to trace an artifact back to the run that produced it."""
    command: str
    config: Dict[str, Any]
    seed: int
    weights_sha256: Optional[str] = None
    checkpoint: Optional[str] = None
    epoch_metrics: List[Dict[str, Any]] = field(default_factory=list)
    started_at: str = field(default_factory=lambda: time.strftime('%Y-%m-%dT%H:%M:%S'))
    finished_at: Optional[str] = None

    def content_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d['manifest_sha256'] = self.content_hash()
        return d

    def finish(self) -> 'RunManifest':
        self.finished_at = time.strftime('%Y-%m-%dT%H:%M:%S')
        return self

    def save(self, path: str) -> str:
        write_json(path, self.to_dict())
        return self.content_hash()

import logging
import math
import os
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from src.data.synthetic import PairSample
from src.exceptions import ConfigurationError, IncompatibleCheckpointError, NumericError
from src.models.param_store import ParamStore
from src.models.paraformer import ParaFormer, save
from src.models.training_stats import RunManifest, TrainingStats
from src.tensor import backward
from src.training.optimizer import AdamW, lr_schedule
from src.utils import blobfile
from src.utils.storage import write_json

logger = logging.getLogger('ParaFormer')


@dataclass
class TrainSettings:
    epochs: int = 20
    lr: float = 1e-4
    weight_decay: float = 0.01
    warmup_epochs: int = 1
    min_lr: float = 0.0
    grad_clip: Optional[float] = None
    seed: int = 0

    def validate(self) -> 'TrainSettings':
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.lr <= 0 or self.min_lr < 0 or self.min_lr > self.lr:
            raise ConfigurationError("need 0 <= min_lr <= lr and lr > 0")
        if self.warmup_epochs < 0:
            raise ConfigurationError("warmup_epochs must be non-negative")
        return self


def last_checkpoint_path(checkpoint_path: str) -> str:
    root, ext = os.path.splitext(checkpoint_path)
    return f"{root}.last{ext or '.bin'}"


class Trainer:
    """Single-writer training loop over PairSamples, one pair per step."""

    def __init__(self, model: ParaFormer, settings: Optional[TrainSettings] = None,
                 checkpoint_path: Optional[str] = None,
                 on_epoch_end: Optional[Callable[[int, float], None]] = None,
                 on_error: Optional[Callable[[int, Exception], None]] = None,
                 config_snapshot: Optional[Dict[str, Any]] = None):
        """
        Set up a trainer.

        Args:
            model: Model whose store is updated in place
            settings: Optimizer and schedule settings
            checkpoint_path: Where the best weights go; the resumable state goes next to it
            on_epoch_end: Optional callback receiving (epoch number, mean loss)
            on_error: Optional callback receiving (pair index, exception) before a failure propagates
            config_snapshot: Resolved configuration echoed into the run manifest
        """
        self.model = model
        self.settings = (settings or TrainSettings()).validate()
        self.checkpoint_path = checkpoint_path
        self.optimizer = AdamW(model.store.trainable(), lr=self.settings.lr,
                               weight_decay=self.settings.weight_decay,
                               grad_clip=self.settings.grad_clip)
        self.stats = TrainingStats()
        self.start_epoch = 0
        self.total_steps = 0
        self.warmup_steps = 0
        self._on_epoch_end = on_epoch_end
        self._on_error = on_error
        self.manifest = RunManifest(
            command='train',
            config=config_snapshot or {'model': model.cfg.to_dict(), 'train': asdict(self.settings)},
            seed=self.settings.seed,
            checkpoint=checkpoint_path,
        )

    def _call_error_callback(self, index: int, error: Exception) -> None:
        if self._on_error:
            try:
                self._on_error(index, error)
            except Exception as callback_error:
                logger.warning(f"Error in error callback: {callback_error}")

    def current_lr(self) -> float:
        s = self.settings
        return lr_schedule(self.stats.steps, self.total_steps, self.warmup_steps, s.lr, s.min_lr)

    def step(self, sample: PairSample) -> float:
        """Forward, loss, backward and one optimizer update; returns the loss value."""
        loss = self.model.loss(sample)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"loss is {value}")
        backward(loss)
        self.optimizer.step(self.current_lr())
        self.model.store.zero_grad()
        self.stats.steps += 1
        return value

    def epoch_order(self, epoch: int, count: int) -> np.ndarray:
        """Pair order of an epoch; depends only on (seed, epoch) so resumed runs replay it."""
        return np.random.default_rng([self.settings.seed, epoch]).permutation(count)

    def _dump_diagnostics(self, epoch: int, index: int, error: Exception) -> str:
        path = (f"{self.checkpoint_path}.nan-dump.json" if self.checkpoint_path
                else 'paraformer-nan-dump.json')
        dump = {
            'epoch': epoch,
            'step': self.stats.steps,
            'pair_index': int(index),
            'error': str(error),
            'lr': self.current_lr(),
            'param_norms': {n: float(np.linalg.norm(t.data.astype(np.float64)))
                            for n, t in self.model.store.items()},
        }
        write_json(path, dump)
        logger.critical(f"Non-finite value at epoch {epoch + 1}, pair {index}; diagnostics in {path}")
        return path

    def _save_checkpoints(self, epoch: int, mean_loss: float, improved: bool) -> None:
        if not self.checkpoint_path:
            return
        cfg = self.model.cfg
        if improved:
            self.manifest.weights_sha256 = save(self.model.store, self.checkpoint_path, cfg)
        meta = {'config': cfg.to_dict(), 'epoch': epoch, 'optim_step': self.optimizer.t,
                'steps': self.stats.steps, 'best_loss': self.stats.best_loss,
                'epoch_losses': self.stats.epoch_losses,
                'epoch_metrics': self.manifest.epoch_metrics}
        self.model.store.save(last_checkpoint_path(self.checkpoint_path),
                              extra=self.optimizer.state(), meta=meta)

    def resume(self, path: str) -> int:
        """
        Restore weights, optimizer moments and counters from a `last` checkpoint.

        Returns:
            The epoch index training continues from
        """
        loaded, extra, meta = ParamStore.load(path, expected_hash=self.model.cfg.architecture_hash())
        if 'optim_step' not in meta:
            raise IncompatibleCheckpointError(f"{path} holds no optimizer state")
        store = self.model.store
        if set(loaded.names()) != set(store.names()):
            raise IncompatibleCheckpointError(f"{path} does not match the model's parameters")
        for name, tensor in loaded.items():
            store[name].data = tensor.data.astype(store[name].dtype)
        self.optimizer.load_state(extra, meta['optim_step'])
        self.stats.steps = int(meta.get('steps', 0))
        self.stats.best_loss = float(meta.get('best_loss', float('inf')))
        self.stats.epoch_losses = list(meta.get('epoch_losses', []))
        self.manifest.epoch_metrics = list(meta.get('epoch_metrics', []))
        self.start_epoch = int(meta['epoch']) + 1
        self.stats.epochs_completed = self.start_epoch
        logger.info(f"Resumed from {path} at epoch {self.start_epoch + 1}, step {self.stats.steps}")
        return self.start_epoch

    def fit(self, samples: Sequence[PairSample], epochs: Optional[int] = None) -> RunManifest:
        """
        Train for `epochs` epochs (counting any already completed before a resume).

        Raises:
            NumericError: NaN/Inf loss or gradient, after the diagnostic dump is written
        """
        if not samples:
            raise ConfigurationError("no training pairs")
        epochs = epochs or self.settings.epochs
        self.total_steps = epochs * len(samples)
        self.warmup_steps = self.settings.warmup_epochs * len(samples)
        logger.info(f"Training {self.model.cfg.variant} on {len(samples)} pairs for {epochs} epochs "
                    f"(starting at epoch {self.start_epoch + 1})")

        try:
            for epoch in range(self.start_epoch, epochs):
                started = time.time()
                losses: List[float] = []
                for index in self.epoch_order(epoch, len(samples)):
                    try:
                        losses.append(self.step(samples[index]))
                    except NumericError as e:
                        self._call_error_callback(int(index), e)
                        self._dump_diagnostics(epoch, int(index), e)
                        raise
                mean_loss = float(np.mean(losses))
                improved = mean_loss < self.stats.best_loss
                if improved:
                    self.stats.best_loss = mean_loss
                self.stats.epoch_losses.append(mean_loss)
                self.stats.epochs_completed = epoch + 1
                seconds = time.time() - started
                self.manifest.epoch_metrics.append(
                    {'epoch': epoch + 1, 'loss': mean_loss, 'lr': self.current_lr(), 'seconds': seconds})
                logger.info(f"Epoch {epoch + 1}/{epochs}: loss={mean_loss:.6f} "
                            f"lr={self.current_lr():.2e} ({seconds:.1f}s)")
                self._save_checkpoints(epoch, mean_loss, improved)
                if self._on_epoch_end:
                    try:
                        self._on_epoch_end(epoch + 1, mean_loss)
                    except Exception as callback_error:
                        logger.warning(f"Error in epoch callback: {callback_error}")
        except KeyboardInterrupt:
            logger.info("Training stopped by user (Ctrl+C)")
        finally:
            self._log_stats()

        self.manifest.finish()
        if self.checkpoint_path:
            if self.manifest.weights_sha256 is None and os.path.exists(self.checkpoint_path):
                self.manifest.weights_sha256 = blobfile.file_hash(self.checkpoint_path)
            self.manifest.save(f"{self.checkpoint_path}.manifest.json")
        return self.manifest

    def _log_stats(self) -> None:
        elapsed_min = (time.time() - self.stats.start_time) / 60
        logger.info(
            f"Stats: {self.stats.epochs_completed} epochs, {self.stats.steps} steps, "
            f"best loss {self.stats.best_loss:.6f}, elapsed {elapsed_min:.1f} minutes"
        )

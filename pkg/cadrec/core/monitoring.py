"""Training-run monitoring: stage timers and the epoch/step collector."""

import logging
import time
from collections.abc import Callable
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import wraps

from cadrec.core.models import EpochLog

logger = logging.getLogger(__name__)


@dataclass
class StageTimer:
    """Wall-clock duration of one training stage; `elapsed` is set when the block exits."""

    operation: str
    labels: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def describe(self) -> str:
        if not self.labels:
            return self.operation
        return f"{self.operation} [" + " ".join(f"{k}={v}" for k, v in self.labels.items()) + "]"


@contextmanager
def track_execution_time(operation_name: str, **labels):
    """
    Time a stage such as data preparation, an epoch or a full run.

    Labels (e.g. epoch=3) are echoed in the log line.
    """
    timer = StageTimer(operation_name, labels)
    start = time.perf_counter()
    try:
        yield timer
    finally:
        timer.elapsed = time.perf_counter() - start
        logger.info(f"{timer.describe()} took {timer.elapsed:.3f}s")


def monitor_function(operation_name: str | None = None):
    """Decorator form of `track_execution_time` for whole pipeline stages."""

    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            with track_execution_time(operation_name or func.__name__):
                return func(*args, **kwargs)

        return wrapper

    return decorator


class MetricsCollector:
    """Collect training metrics; its epoch history is the run's train log."""

    def __init__(self):
        self.metrics = {
            "epochs": 0,
            "steps": 0,
            "rejected_steps": 0,
            "last_loss": 0.0,
            "average_epoch_time": 0.0,
        }
        self._epoch_times: list[float] = []
        self.history: list[EpochLog] = []

    def record_epoch(self, entry: EpochLog):
        """Record a finished epoch."""
        self.metrics["epochs"] += 1
        self.metrics["last_loss"] = entry.loss
        self.history.append(entry)
        self._epoch_times.append(entry.seconds)
        if len(self._epoch_times) > 100:
            self._epoch_times.pop(0)
        self.metrics["average_epoch_time"] = sum(self._epoch_times) / len(self._epoch_times)

    def record_step(self):
        """Record an accepted parameter update."""
        self.metrics["steps"] += 1

    def record_rejected_step(self, parameter: str):
        """Record an update rejected for non-finite gradients or parameters."""
        self.metrics["rejected_steps"] += 1
        logger.warning(f"Rejected update: non-finite values in '{parameter}'")

    def reset(self):
        """Forget everything recorded so far."""
        self.__init__()

    def get_metrics(self) -> dict:
        """Get current metrics."""
        return self.metrics.copy()


metrics = MetricsCollector()

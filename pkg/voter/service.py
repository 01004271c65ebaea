# voter/service.py
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, TypeVar

from django.conf import settings
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

T = TypeVar('T')


@dataclass(frozen=True)
class EngineSettings:
    """Process-wide engine defaults"""
    event_budget: int = 10 ** 9
    confidence_level: float = 0.99
    threads: int = 1
    batch_size: int = 65536
    output_dir: str = 'artifacts'

    def __post_init__(self):
        if self.event_budget < 1:
            raise ValidationError("CVM_EVENT_BUDGET must be positive")
        if not 0 < self.confidence_level < 1:
            raise ValidationError("CVM_CONFIDENCE_LEVEL must lie strictly between 0 and 1")
        if self.threads < 1:
            raise ValidationError("CVM_THREADS must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("CVM_BATCH_SIZE must be positive")

    @classmethod
    def from_settings(cls, **overrides) -> 'EngineSettings':
        values = dict(
            event_budget=int(getattr(settings, 'CVM_EVENT_BUDGET', 10 ** 9)),
            confidence_level=float(getattr(settings, 'CVM_CONFIDENCE_LEVEL', 0.99)),
            threads=int(getattr(settings, 'CVM_THREADS', 1)),
            batch_size=int(getattr(settings, 'CVM_BATCH_SIZE', 65536)),
            output_dir=str(getattr(settings, 'CVM_OUTPUT_DIR', 'artifacts')),
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


class SimulationException(Exception):
    """Orchestration failure while running replicates"""
    def __init__(self, message: str, code: str = None, details: Dict = None):
        self.message = message
        self.code = code or 'simulation_failed'
        self.details = details or {}
        super().__init__(self.message)


class ReplicateService:
    """
    Runs independent replicates, serially or on a thread pool. Results come
    back in replicate-index order whatever the completion order was.
    """

    def __init__(self, config: EngineSettings = None):
        self.config = config or EngineSettings.from_settings()
        self._executor: Optional[ThreadPoolExecutor] = None

    @property
    def executor(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.config.threads, thread_name_prefix='cvm')
        return self._executor

    def map_replicates(self, task: Callable[[int], T], replicates: int, label: str = 'replicates') -> List[T]:
        """Call task(index) for index in 0..replicates-1."""
        if replicates < 1:
            raise ValidationError(f"replicates must be at least 1, got {replicates}")
        started = time.monotonic()
        logger.info(f"Running {replicates} {label} on {self.config.threads} thread(s)")
        try:
            if self.config.threads == 1:
                results = [task(index) for index in range(replicates)]
            else:
                futures = {self.executor.submit(task, index): index for index in range(replicates)}
                indexed = []
                for future in as_completed(futures):
                    indexed.append((futures[future], future.result()))
                indexed.sort(key=lambda item: item[0])
                results = [result for _, result in indexed]
        except ValidationError:
            raise
        except Exception as e:
            logger.error(f"Replicate execution failed: {str(e)}")
            raise SimulationException(f"Replicate execution failed: {str(e)}",
                                      details={'label': label, 'replicates': replicates})
        logger.info(f"Finished {replicates} {label} in {time.monotonic() - started:.2f}s")
        return results

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def get_replicate_service(threads: int = None) -> ReplicateService:
    """Get replicate service instance"""
    return ReplicateService(EngineSettings.from_settings(threads=threads))

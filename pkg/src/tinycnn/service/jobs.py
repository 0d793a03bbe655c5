"""Background training jobs: one at a time, cancellable, with live progress.

Training mutates a single weight state, so the manager enforces one active
job; starting a second while one runs raises :class:`JobBusyError`.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable

from ..trainer import BatchRecord


class JobBusyError(Exception):
    """A training job is already queued or running."""


@dataclass
class TrainJob:
    job_id: str
    state: str = "queued"  # queued -> running -> completed/cancelled/failed
    log: list[str] = field(default_factory=list)
    records: list[BatchRecord] = field(default_factory=list)
    result: dict | None = None
    error: str | None = None
    error_category: str | None = None
    cancel_event: threading.Event = field(default_factory=threading.Event)
    thread: threading.Thread | None = None

    def append_log(self, line: str) -> None:
        self.log.append(line)

    def append_record(self, record: BatchRecord) -> None:
        self.records.append(record)

    @property
    def active(self) -> bool:
        return self.state in ("queued", "running")


class TrainJobManager:
    def __init__(self):
        self._jobs: dict[str, TrainJob] = {}
        self._lock = threading.Lock()

    def start(self, runner: Callable[[TrainJob], None]) -> TrainJob:
        """Spawn ``runner(job)`` on a worker thread; single-flight."""
        with self._lock:
            for job in self._jobs.values():
                if job.active:
                    raise JobBusyError(f"job {job.job_id} is still {job.state}")
            job = TrainJob(job_id=uuid.uuid4().hex[:12])
            self._jobs[job.job_id] = job

            def work():
                job.state = "running"
                try:
                    runner(job)
                    job.state = "cancelled" if job.cancel_event.is_set() else "completed"
                except Exception as exc:  # surfaced through the status endpoint
                    job.state = "failed"
                    job.error = str(exc)
                    job.error_category = _categorize(exc)

            job.thread = threading.Thread(target=work, daemon=True)
            job.thread.start()
            return job

    def get(self, job_id: str) -> TrainJob | None:
        with self._lock:
            return self._jobs.get(job_id)

    def cancel(self, job_id: str) -> TrainJob | None:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is not None:
            job.cancel_event.set()
        return job

    def wait(self, job_id: str, timeout: float | None = None) -> TrainJob | None:
        job = self.get(job_id)
        if job is not None and job.thread is not None:
            job.thread.join(timeout)
        return job


def _categorize(exc: Exception) -> str:
    from ..errors import ConfigError, DatasetError, NumericFault, StoreError

    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, DatasetError):
        return "dataset"
    if isinstance(exc, NumericFault):
        return "numeric"
    if isinstance(exc, (StoreError, OSError)):
        return "io"
    return "internal"

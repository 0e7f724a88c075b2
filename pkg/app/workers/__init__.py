# app/workers/__init__.py
"""
Parallel runner for independent simulations (sweep entries, figure variants).

Jobs are plain synchronous callables; each runs in a worker thread and owns
all of its state. Results come back in submission order.
"""

import asyncio
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import structlog

from app.config import settings

logger = structlog.get_logger(__name__)

Job = Callable[[], Any]


@dataclass
class JobRecord:
    name: str
    running: bool = False
    done: bool = False
    error: Optional[str] = None


@dataclass
class WorkerRegistry:
    jobs: List[JobRecord] = field(default_factory=list)

    def reset(self) -> None:
        self.jobs.clear()


# Jobs of the most recent run_jobs or run_parallel call
registry = WorkerRegistry()


def _job_name(job: Job, index: int) -> str:
    name = getattr(job, "__name__", None) or getattr(getattr(job, "func", None), "__name__", "job")
    return f"{name}[{index}]"


async def run_parallel(jobs: Sequence[Job], max_workers: Optional[int] = None) -> List[Any]:
    """Run jobs in threads, at most max_workers at a time.

    Every job runs to completion; the first failure (in submission order)
    is re-raised after all jobs have settled.
    """
    limit = max_workers if max_workers is not None else settings.max_workers
    if limit < 1:
        raise ValueError(f"max_workers must be >= 1, got {limit}")
    semaphore = asyncio.Semaphore(limit)
    registry.reset()
    records = [JobRecord(name=_job_name(job, i)) for i, job in enumerate(jobs)]
    registry.jobs.extend(records)
    logger.info("Starting parallel jobs", jobs=len(records), max_workers=limit)

    async def worker(job: Job, record: JobRecord) -> Any:
        async with semaphore:
            record.running = True
            try:
                return await asyncio.to_thread(job)
            except Exception as e:
                record.error = str(e)
                logger.error("Job failed", job=record.name, error=str(e))
                raise
            finally:
                record.running = False
                record.done = True

    results = await asyncio.gather(
        *(worker(job, record) for job, record in zip(jobs, records)),
        return_exceptions=True,
    )
    for result in results:
        if isinstance(result, BaseException):
            raise result
    logger.info("Finished parallel jobs", jobs=len(records))
    return list(results)


def run_jobs(jobs: Sequence[Job], max_workers: Optional[int] = None) -> List[Any]:
    """Synchronous entry point for run_parallel."""
    if not jobs:
        return []
    if len(jobs) == 1 or (max_workers is not None and max_workers == 1):
        registry.reset()
        return [job() for job in jobs]
    return asyncio.run(run_parallel(jobs, max_workers))


def get_worker_status() -> Dict[str, Any]:
    """Get status of the jobs from the latest parallel run"""
    status: Dict[str, Any] = {
        "total_workers": len(registry.jobs),
        "running_workers": sum(1 for job in registry.jobs if job.running),
        "failed_workers": sum(1 for job in registry.jobs if job.error is not None),
        "workers": [],
    }
    for job in registry.jobs:
        worker_info: Dict[str, Any] = {"name": job.name, "running": job.running, "done": job.done}
        if job.error is not None:
            worker_info["error"] = job.error
        status["workers"].append(worker_info)
    return status

# tests/test_workers/test_workers.py
import threading
import time
from functools import partial

import pytest

from app.workers import get_worker_status, run_jobs, run_parallel


def _echo(value, delay=0.0):
    time.sleep(delay)
    return value


def _fail(exc):
    raise exc


@pytest.mark.asyncio
async def test_run_parallel_keeps_submission_order():
    jobs = [partial(_echo, i, delay=0.03 * (3 - i)) for i in range(4)]
    assert await run_parallel(jobs, max_workers=4) == [0, 1, 2, 3]

    status = get_worker_status()
    assert status["total_workers"] == 4
    assert status["running_workers"] == 0
    assert status["failed_workers"] == 0
    assert status["workers"][0]["name"] == "_echo[0]"
    assert all(worker["done"] for worker in status["workers"])


@pytest.mark.asyncio
async def test_run_parallel_limits_concurrency():
    lock = threading.Lock()
    active, peak = [0], [0]

    def job():
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1

    await run_parallel([job] * 6, max_workers=2)
    assert 1 <= peak[0] <= 2


@pytest.mark.asyncio
async def test_run_parallel_reraises_first_failure():
    finished = []

    def slow():
        time.sleep(0.02)
        finished.append("slow")
        return 1

    jobs = [slow, partial(_fail, ValueError("first")), partial(_fail, KeyError("second"))]
    with pytest.raises(ValueError, match="first"):
        await run_parallel(jobs, max_workers=3)
    assert finished == ["slow"]

    status = get_worker_status()
    assert status["failed_workers"] == 2
    assert status["workers"][1]["error"] == "first"
    assert "error" not in status["workers"][0]


@pytest.mark.asyncio
async def test_run_parallel_rejects_zero_workers():
    with pytest.raises(ValueError):
        await run_parallel([partial(_echo, 1)], max_workers=0)


def test_run_jobs_serial_path_stays_on_caller_thread():
    caller = threading.get_ident()
    jobs = [threading.get_ident, threading.get_ident]
    assert run_jobs(jobs, max_workers=1) == [caller, caller]
    assert get_worker_status()["total_workers"] == 0
    assert run_jobs([]) == []


def test_run_jobs_parallel_path():
    assert run_jobs([partial(_echo, "a", 0.01), partial(_echo, "b")], max_workers=2) == ["a", "b"]

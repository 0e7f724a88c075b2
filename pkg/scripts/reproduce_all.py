# scripts/reproduce_all.py
"""
Regenerate every figure bundle in one go.

    python scripts/reproduce_all.py --out runs/figures --seed 0
"""
import argparse
import sys
import time
from pathlib import Path

# Add the app directory to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

import structlog

from app.config import settings
from app.core.errors import StickyLabError
from app.core.logging import configure_logging
from app.services import experiment_service, io_service

logger = structlog.get_logger(__name__)


def main() -> int:
    parser = argparse.ArgumentParser(description="Regenerate all figure bundles")
    parser.add_argument("--out", default="runs/figures")
    parser.add_argument("--seed", type=int, default=settings.default_seed)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    configure_logging(settings)
    out = io_service.resolve_output_dir(args.out)
    failed = []
    for figure_id in experiment_service.FIGURE_IDS:
        started = time.perf_counter()
        try:
            summary = experiment_service.reproduce_figure(figure_id, args.seed, out, args.workers)
        except StickyLabError as e:
            logger.error("Figure failed", figure=figure_id, error=str(e))
            return e.exit_code
        logger.info(
            "Figure done",
            figure=figure_id,
            passed=summary.passed,
            elapsed=round(time.perf_counter() - started, 2),
        )
        failed.extend(f"fig{figure_id}:{name}" for name in summary.failed_checks())

    if failed:
        logger.warning("Some figure checks failed", failed=failed)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Main entry point for the FD-DLM augmented Lagrangian toolkit.

Configures logging and dispatches to the command-line interface.
"""
import logging
import sys

from core.config import settings

logging.basicConfig(
    level=settings.effective_log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stdout
)

logger = logging.getLogger(__name__)


def run(argv=None):
    from cli.fdal_cli import main

    logger.debug(f"🚀 Starting fdal with output directory {settings.output_dir}")
    main(argv)


if __name__ == "__main__":
    run()

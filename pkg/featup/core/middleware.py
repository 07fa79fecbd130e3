import sys
import time
from typing import Callable, TextIO

from featup.core.errors import FeatUpError
from featup.core.logging import get_logger

logger = get_logger(__name__)

EXIT_UNEXPECTED = 1
EXIT_MISSING_FILE = 3


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def run_command(
    name: str,
    handler: Callable[[], int],
    stderr: TextIO = None,
) -> int:
    """Global error handling for a CLI subcommand

    Returns the process exit code and prints exactly one diagnostic line on failure.
    """
    stderr = stderr or sys.stderr
    start_time = time.time()

    try:
        code = handler()
        process_time = time.time() - start_time

        logger.info(
            "command_processed",
            command=name,
            exit_code=code,
            process_time=f"{process_time:.3f}s",
        )
        return code

    except FeatUpError as exc:
        logger.warning(
            "command_failed",
            command=name,
            error=exc.message,
            error_type=type(exc).__name__,
        )
        print(f"error: {_one_line(exc.message)}", file=stderr)
        return exc.exit_code

    except FileNotFoundError as exc:
        missing = exc.filename or str(exc)
        logger.warning("command_failed", command=name, error="missing file", path=str(missing))
        print(f"error: file not found: {_one_line(missing)}", file=stderr)
        return EXIT_MISSING_FILE

    except Exception as exc:
        process_time = time.time() - start_time

        logger.error(
            "command_error",
            command=name,
            error=str(exc),
            error_type=type(exc).__name__,
            process_time=f"{process_time:.3f}s",
            exc_info=True,
        )
        print(f"error: unexpected {type(exc).__name__}: {_one_line(exc)}", file=stderr)
        return EXIT_UNEXPECTED

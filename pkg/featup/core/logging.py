"""
Structured logging for the engine

Events go to stderr so stdout stays free for command output. LOG_FORMAT picks
the renderer: ``console`` for terminals, ``json`` for one object per line.
"""
import logging
import sys
from typing import Any, MutableMapping, Optional, TextIO

import numpy as np
import structlog
import torch

from featup.core.config import settings
from featup.core.errors import ParameterError


def scalarize_values(_logger: Any, _method: str, event_dict: MutableMapping[str, Any]) -> MutableMapping[str, Any]:
    """Turn tensors and numpy values into plain Python numbers or shapes"""
    for key, value in event_dict.items():
        if isinstance(value, torch.Tensor):
            event_dict[key] = value.detach().item() if value.numel() == 1 else list(value.shape)
        elif isinstance(value, np.generic):
            event_dict[key] = value.item()
    return event_dict


def build_renderer(fmt: str):
    if fmt == "json":
        return structlog.processors.JSONRenderer(sort_keys=True)
    if fmt == "console":
        return structlog.dev.ConsoleRenderer(colors=False)
    raise ParameterError(f"unknown log format {fmt!r}; expected 'console' or 'json'")


def configure_logging(
    level: Optional[str] = None,
    fmt: Optional[str] = None,
    stream: Optional[TextIO] = None,
) -> None:
    """Route structlog through the stdlib root logger; arguments default to settings"""
    level_name = (level or settings.LOG_LEVEL).upper()
    renderer = build_renderer(fmt or settings.LOG_FORMAT)

    logging.basicConfig(
        format="%(message)s",
        stream=stream or sys.stderr,
        level=getattr(logging, level_name),
        force=True,
    )

    # Not cached: module-level loggers pick up reconfiguration
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            scalarize_values,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)


configure_logging()

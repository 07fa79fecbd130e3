import argparse
from pathlib import Path
from typing import Any, Callable

import pandas as pd
import torch
from pydantic import ValidationError

from featup.core.errors import UsageError
from featup.schemas.training import TrainConfig
from featup.services.trainer import LOSS_COLUMNS
from featup.storage.atomic import PathLike, write_text


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that reports problems as UsageError instead of exiting"""

    def error(self, message: str):
        raise UsageError(message)


def build_config(factory: Callable[..., TrainConfig], **values: Any) -> TrainConfig:
    try:
        return factory(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise UsageError(f"invalid value for {field}: {first['msg']}") from exc


def loss_trace_path(checkpoint_path: PathLike) -> Path:
    path = Path(checkpoint_path)
    return path.with_name(f"{path.stem}_loss.csv")


def write_loss_trace(trace: torch.Tensor, path: PathLike) -> None:
    frame = pd.DataFrame(trace.numpy(), columns=list(LOSS_COLUMNS))
    frame.index.name = "step"
    write_text(path, frame.to_csv(float_format="%.8g"))

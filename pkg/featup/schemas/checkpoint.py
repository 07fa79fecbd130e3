from typing import Any, Dict, List, Literal

from pydantic import BaseModel, Field

from featup.schemas.training import TrainConfig


class TensorSpec(BaseModel):
    """Name and shape of one tensor payload"""

    name: str
    shape: List[int]

    @property
    def numel(self) -> int:
        count = 1
        for dim in self.shape:
            count *= dim
        return count


class CheckpointManifest(BaseModel):
    """Metadata block of a checkpoint container; payloads follow in listed order"""

    kind: Literal["implicit", "jbu"]
    format_version: int = Field(1, ge=1)
    tensors: List[TensorSpec]
    config: TrainConfig
    transform_seeds: List[int] = []
    metadata: Dict[str, Any] = {}

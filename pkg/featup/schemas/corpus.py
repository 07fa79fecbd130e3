from typing import List

from pydantic import BaseModel, Field


class CorpusEntry(BaseModel):
    name: str  # directory of the image, relative to the corpus root
    seed: int
    regions: int = Field(..., ge=1)


class CorpusManifest(BaseModel):
    """Index of a generated corpus: one directory per image"""

    seed: int
    hi_res: int = Field(..., ge=1)
    channels: int = Field(..., ge=1)
    downsample: int = Field(..., ge=1)
    images: List[CorpusEntry]

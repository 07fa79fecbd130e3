import hashlib
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class JitterTransform(BaseModel):
    """
    Geometric jitter applied to an image and replayed on feature maps

    Pixel quantities (pads, crop offsets) are expressed at the reference image
    size ``ref_h x ref_w``; maps at other resolutions scale them proportionally.
    Order is fixed: reflection pad -> zoom/crop -> horizontal flip.
    """

    model_config = ConfigDict(frozen=True)

    pad_left: int = Field(0, ge=0)
    pad_right: int = Field(0, ge=0)
    pad_top: int = Field(0, ge=0)
    pad_bottom: int = Field(0, ge=0)
    zoom: float = Field(1.0, ge=1.0)
    crop_offset_y: float = Field(0.0, ge=0.0)  # in padded reference pixels
    crop_offset_x: float = Field(0.0, ge=0.0)
    hflip: bool = False
    ref_h: int = Field(224, ge=1)
    ref_w: int = Field(224, ge=1)
    seed: Optional[int] = None  # seed the transform was sampled from, if any

    @model_validator(mode="after")
    def _crop_inside_window(self) -> "JitterTransform":
        slack = 1e-6
        if self.crop_offset_y > self.padded_h - self.window_h + slack:
            raise ValueError("crop_offset_y leaves the padded image")
        if self.crop_offset_x > self.padded_w - self.window_w + slack:
            raise ValueError("crop_offset_x leaves the padded image")
        return self

    @property
    def padded_h(self) -> int:
        return self.ref_h + self.pad_top + self.pad_bottom

    @property
    def padded_w(self) -> int:
        return self.ref_w + self.pad_left + self.pad_right

    @property
    def window_h(self) -> float:
        return self.padded_h / self.zoom

    @property
    def window_w(self) -> float:
        return self.padded_w / self.zoom

    @property
    def output_size(self) -> Tuple[int, int]:
        """Size of the transformed image; views are rendered back at reference size"""
        return self.ref_h, self.ref_w

    @property
    def is_identity(self) -> bool:
        return (
            self.pad_left == self.pad_right == self.pad_top == self.pad_bottom == 0
            and self.zoom == 1.0
            and self.crop_offset_y == 0.0
            and self.crop_offset_x == 0.0
            and not self.hflip
        )

    def digest(self) -> str:
        """Stable hash of the geometry; names the view file for this transform"""
        payload = self.model_dump_json(exclude={"seed"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def describe(self) -> str:
        return (
            f"JitterTransform({self.digest()}: pad=({self.pad_top},{self.pad_bottom},"
            f"{self.pad_left},{self.pad_right}) zoom={self.zoom:.4f} hflip={self.hflip})"
        )


class ViewManifest(BaseModel):
    """Maps view digests to the transforms that produced them"""

    image_h: int = Field(..., ge=1)
    image_w: int = Field(..., ge=1)
    identity: str  # digest of the untransformed view
    views: Dict[str, JitterTransform]

from typing import List, Literal, Optional

from pydantic import BaseModel, Field


class FourierConfig(BaseModel):
    """Fourier feature encoding of coordinates (and optionally colors)"""

    num_freqs: int = Field(10, ge=1)
    include_color: bool = True

    @property
    def frequencies(self) -> List[float]:
        return [2.0 ** k for k in range(self.num_freqs)]

    @property
    def num_components(self) -> int:
        return 5 if self.include_color else 2

    @property
    def encoded_dim(self) -> int:
        # cos + sin per component and frequency, raw components appended
        return self.num_components * (2 * self.num_freqs + 1)


class TrainConfig(BaseModel):
    """
    Hyperparameters for one training run

    Defaults are the implicit preset; ``TrainConfig.jbu()`` gives the JBU preset.
    """

    mode: Literal["implicit", "jbu"] = "implicit"
    steps: int = Field(2000, ge=0)
    jitters_per_image: int = Field(10, ge=1)
    images_per_batch: int = Field(1, ge=1)
    max_pad: int = Field(30, ge=0)
    max_zoom: float = Field(1.8, ge=1.0)
    proj_dim: int = Field(128, ge=1)
    kernel_size: int = Field(29, ge=1)
    tv_weight: float = Field(0.05, ge=0.0)
    lr: float = Field(0.001, gt=0.0)
    seed: int = 0

    downsampler: Literal["attention", "simple"] = "attention"
    use_uncertainty: bool = True
    grad_clip: Optional[float] = Field(10.0, gt=0.0)  # None disables clipping

    # Implicit network
    hidden_dim: int = Field(128, ge=1)
    num_freqs: int = Field(10, ge=1)
    color_features: bool = True
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    explicit: bool = False  # learn a raw feature buffer instead of the network

    # JBU stack
    jbu_radius: int = Field(1, ge=1)
    range_mode: Literal["softmax", "euclidean", "cosine"] = "softmax"
    use_range_mlp: bool = True

    log_every: int = Field(50, ge=1)

    @classmethod
    def implicit(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def jbu(cls, **overrides) -> "TrainConfig":
        values = dict(
            mode="jbu",
            jitters_per_image=2,
            images_per_batch=4,
            max_zoom=2.0,
            proj_dim=30,
            kernel_size=16,
            tv_weight=0.0,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def fourier(self) -> FourierConfig:
        return FourierConfig(num_freqs=self.num_freqs, include_color=self.color_features)


class ReconstructionReport(BaseModel):
    """Held-out reconstruction loss of a JBU stack against the bilinear baseline"""

    images: int
    jbu_loss: float
    bilinear_loss: float

    @property
    def improvement(self) -> float:
        return self.bilinear_loss - self.jbu_loss

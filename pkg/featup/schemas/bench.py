from pydantic import BaseModel


class BenchRecord(BaseModel):
    """One row of the adaptive-convolution benchmark"""

    shape: str  # "B x H x W x C x R"
    method: str  # fast | reference
    forward_ms: float
    backward_ms: float
    peak_mb: float
    max_abs_diff: float = 0.0  # against the reference output; NaN when skipped

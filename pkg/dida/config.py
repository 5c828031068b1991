from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DidaConfig(BaseModel):
    """Architecture knobs of the DIDA module; every ablation axis is a field here."""
    model_config = ConfigDict(extra="forbid")

    in_channels: int = Field(gt=0)
    reduction: int = Field(default=16, gt=0)
    dilations: List[int] = Field(default_factory=lambda: [1, 2], min_length=1)
    kernel_size: int = Field(default=3, gt=0)
    # Overrides kernel_size per branch, e.g. [1, 3] for the 1x1 top-branch ablation.
    branch_kernel_sizes: Optional[List[int]] = None
    share_reduction: bool = True
    generator_mode: Literal["dynamic", "static_cnn"] = "dynamic"
    out_channels: Optional[int] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_geometry(self) -> "DidaConfig":
        if self.in_channels % self.reduction:
            raise ValueError(f"in_channels {self.in_channels} is not divisible by reduction {self.reduction}")
        if any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be >= 1, got {self.dilations}")
        if self.branch_kernel_sizes is not None and len(self.branch_kernel_sizes) != len(self.dilations):
            raise ValueError(
                f"branch_kernel_sizes {self.branch_kernel_sizes} must have one entry per dilation {self.dilations}"
            )
        for size in self.kernel_sizes:
            if size < 1 or size % 2 == 0:
                raise ValueError(f"kernel sizes must be odd, got {size}")
        if self.resolved_out_channels % len(self.dilations):
            raise ValueError(
                f"out_channels {self.resolved_out_channels} is not divisible by branch count {len(self.dilations)}"
            )
        return self

    @property
    def reduced_channels(self) -> int:
        return self.in_channels // self.reduction

    @property
    def resolved_out_channels(self) -> int:
        return self.out_channels or self.in_channels

    @property
    def kernel_sizes(self) -> List[int]:
        return list(self.branch_kernel_sizes or [self.kernel_size] * len(self.dilations))

    @property
    def branch_out_channels(self) -> int:
        return self.resolved_out_channels // len(self.dilations)


class DidaOptions(BaseModel):
    """DIDA settings as written in an experiment config; channel counts default to the insertion point's."""
    model_config = ConfigDict(extra="forbid")

    in_channels: Optional[int] = Field(default=None, gt=0)
    reduction: int = Field(default=16, gt=0)
    dilations: List[int] = Field(default_factory=lambda: [1, 2], min_length=1)
    kernel_size: int = Field(default=3, gt=0)
    branch_kernel_sizes: Optional[List[int]] = None
    share_reduction: bool = True
    generator_mode: Literal["dynamic", "static_cnn"] = "dynamic"
    out_channels: Optional[int] = Field(default=None, gt=0)

    def resolve(self, in_channels: int, out_channels: int) -> DidaConfig:
        values = self.model_dump()
        values["in_channels"] = self.in_channels or in_channels
        values["out_channels"] = self.out_channels or out_channels
        return DidaConfig(**values)

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DomainSpec(BaseModel):
    """One domain: IDX files on disk or procedurally generated toy digits, optionally shifted by a recipe."""
    model_config = ConfigDict(extra="forbid")

    name: str
    kind: Literal["idx", "toy"] = "toy"
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    # e.g. "invert+noise(0.2)"; applied to train and test splits with the same seed.
    recipe: Optional[str] = None
    recipe_seed: int = 0
    # Slices [offset, offset + limit) of each split, so two domains can read disjoint parts of one file.
    offset: int = Field(default=0, ge=0)
    limit: Optional[int] = Field(default=None, gt=0)
    test_offset: int = Field(default=0, ge=0)
    test_limit: Optional[int] = Field(default=None, gt=0)
    toy_count: int = Field(default=512, gt=0)
    toy_test_count: int = Field(default=256, gt=0)
    toy_seed: int = 0

    @model_validator(mode="after")
    def paths_for_idx(self) -> "DomainSpec":
        if self.kind == "idx" and not self.images:
            raise ValueError(f"domain {self.name!r}: kind 'idx' needs an images path")
        return self


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weak_shift: int = Field(default=2, ge=0)
    weak_flip: bool = False
    strong_ops: int = Field(default=2, ge=0)
    strong_ops_pool: List[str] = Field(
        default_factory=lambda: [
            "invert_region", "posterize", "sharpness", "shear", "translate", "rotate", "contrast", "brightness",
        ]
    )
    erase_fraction: float = Field(default=0.25, ge=0.0, lt=1.0)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sources: List[DomainSpec] = Field(min_length=1)
    target: DomainSpec
    mean: float = 0.1307
    std: float = Field(default=0.3081, gt=0.0)
    image_size: int = Field(default=32, gt=0)
    num_classes: int = Field(default=10, gt=1)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    cache_dir: Optional[str] = ".dida_cache"
    # Batches produced ahead of training by a worker thread; 0 keeps sampling inline.
    prefetch: int = Field(default=0, ge=0)

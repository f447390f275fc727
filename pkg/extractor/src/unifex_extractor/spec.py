"""Extraction job description."""

from __future__ import annotations

from dataclasses import dataclass

POINT_DEFAULT = "cls_or_pooled_default"
POINT_SAM_PRE = "sam_pre_downscale_avg"
POINT_SAM_POST = "sam_post_downscale_avg_flatten"

EXTRACTION_POINTS = (POINT_DEFAULT, POINT_SAM_PRE, POINT_SAM_POST)

SPLITS = ("train", "index", "query")


@dataclass(frozen=True)
class ExtractSpec:
    """What to extract: encoder, images, preprocessing, and output tap.

    Preprocessing is fixed to resize-shorter-edge followed by a center
    crop at the encoder's resolution (no augmentation). The extraction
    point selects where embeddings leave the network; the SAM points tap
    patch embeddings before/after the channel downscale and average-pool
    them.
    """

    encoder: str
    image_list: str
    extraction_point: str = POINT_DEFAULT
    batch_size: int = 16
    resolution: int | None = None  # None: the encoder's native resolution
    split: str = "train"

    def __post_init__(self) -> None:
        if self.extraction_point not in EXTRACTION_POINTS:
            raise ValueError(
                f"extraction_point must be one of {EXTRACTION_POINTS}, "
                f"got {self.extraction_point!r}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.resolution is not None and self.resolution < 1:
            raise ValueError("resolution must be positive")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")

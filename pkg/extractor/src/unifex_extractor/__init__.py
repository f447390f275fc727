"""unifex-extractor: export frozen vision-encoder embeddings into the
EMB1 + manifest formats consumed by the probing toolkit."""

from .encoders import (
    Encoder,
    EncoderWeightsError,
    PooledVisionEncoder,
    SamStyleEncoder,
    build_encoder,
    known_encoders,
)
from .imagelist import ImageEntry, read_image_list
from .pipeline import ExtractReport, extract
from .spec import (
    EXTRACTION_POINTS,
    POINT_DEFAULT,
    POINT_SAM_POST,
    POINT_SAM_PRE,
    ExtractSpec,
)
from .writer import write_emb1, write_manifest

__version__ = "0.1.0"

__all__ = [
    "EXTRACTION_POINTS",
    "Encoder",
    "EncoderWeightsError",
    "ExtractReport",
    "ExtractSpec",
    "ImageEntry",
    "POINT_DEFAULT",
    "POINT_SAM_POST",
    "POINT_SAM_PRE",
    "PooledVisionEncoder",
    "SamStyleEncoder",
    "build_encoder",
    "extract",
    "known_encoders",
    "read_image_list",
    "write_emb1",
    "write_manifest",
]

"""Encoder wrappers and the registry of known pretrained checkpoints.

Two wrapper shapes cover every supported family:

* :class:`PooledVisionEncoder` — anything exposing a single pooled/CLS
  vector per image (CLIP-style projections, SigLIP pooling head, DINOv2
  CLS token).
* :class:`SamStyleEncoder` — encoders without a class token whose patch
  embeddings are tapped at two levels: before the channel downscale
  (average pooling) and after it (average pooling plus flattening).

Registry entries load pretrained weights through ``transformers``;
missing weights are fatal by design — an extractor that silently ran a
random backbone would poison every downstream artifact.
"""

from __future__ import annotations

from typing import Callable

import torch

from .spec import POINT_DEFAULT, POINT_SAM_POST, POINT_SAM_PRE

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
HALF_MEAN = (0.5, 0.5, 0.5)
HALF_STD = (0.5, 0.5, 0.5)


class EncoderWeightsError(RuntimeError):
    """Pretrained weights could not be obtained; extraction must abort."""


class Encoder:
    """Frozen vision encoder with a declared preprocessing recipe."""

    def __init__(self, name: str, resolution: int, mean, std, supported_points):
        self.name = name
        self.resolution = resolution
        self.mean = mean
        self.std = std
        self.supported_points = tuple(supported_points)

    def check_point(self, point: str) -> None:
        if point not in self.supported_points:
            raise ValueError(
                f"encoder {self.name!r} supports extraction points "
                f"{self.supported_points}, not {point!r}"
            )

    def embed(self, batch: torch.Tensor, point: str) -> torch.Tensor:
        raise NotImplementedError

    def output_convention(self, point: str) -> str:
        """Human-readable description of where the embedding comes from."""
        raise NotImplementedError


class PooledVisionEncoder(Encoder):
    """Encoder producing one pooled/CLS vector per image."""

    def __init__(self, name, resolution, mean, std, forward: Callable, convention: str):
        super().__init__(name, resolution, mean, std, (POINT_DEFAULT,))
        self._forward = forward
        self._convention = convention

    @torch.no_grad()
    def embed(self, batch, point=POINT_DEFAULT):
        self.check_point(point)
        out = self._forward(batch)
        if out.ndim != 2:
            raise ValueError(f"pooled encoder output must be (B, D), got {tuple(out.shape)}")
        return out

    def output_convention(self, point=POINT_DEFAULT):
        return self._convention


class SamStyleEncoder(Encoder):
    """Patch-only encoder tapped before/after its channel downscale.

    ``trunk(batch)`` must return patch embeddings (B, H, W, C);
    ``neck(features)`` the downscaled map (B, C', H, W).
    """

    def __init__(self, name, resolution, mean, std, trunk: Callable, neck: Callable):
        super().__init__(name, resolution, mean, std, (POINT_SAM_PRE, POINT_SAM_POST))
        self._trunk = trunk
        self._neck = neck

    @torch.no_grad()
    def embed(self, batch, point):
        self.check_point(point)
        features = self._trunk(batch)
        if features.ndim != 4:
            raise ValueError(f"trunk output must be (B, H, W, C), got {tuple(features.shape)}")
        if point == POINT_SAM_PRE:
            return features.mean(dim=(1, 2))
        downscaled = self._neck(features)
        if downscaled.ndim != 4:
            raise ValueError(f"neck output must be (B, C, H, W), got {tuple(downscaled.shape)}")
        return downscaled.mean(dim=(2, 3)).flatten(start_dim=1)

    def output_convention(self, point):
        if point == POINT_SAM_PRE:
            return "patch embeddings before downscale, average-pooled"
        return "patch embeddings after downscale, average-pooled and flattened"


# ---------------------------------------------------------------------------
# registry of pretrained checkpoints

_HUB = {
    "clip-vit-l-14-336": ("clip", "openai/clip-vit-large-patch14-336", 336),
    "metaclip-vit-b-16": ("clip", "facebook/metaclip-b16-fullcc2.5b", 224),
    "metaclip-vit-l-14": ("clip", "facebook/metaclip-l14-fullcc2.5b", 224),
    "metaclip-vit-h-14": ("clip", "facebook/metaclip-h14-fullcc2.5b", 224),
    "siglip-vit-b-16-512": ("siglip", "google/siglip-base-patch16-512", 512),
    "siglip-vit-l-16-384": ("siglip", "google/siglip-large-patch16-384", 384),
    "siglip-so400m-14-384": ("siglip", "google/siglip-so400m-patch14-384", 384),
    "dinov2-vit-b-14": ("dinov2", "facebook/dinov2-base", 224),
    "dinov2-vit-b-14-518": ("dinov2", "facebook/dinov2-base", 518),
    "dinov2-vit-l-14": ("dinov2", "facebook/dinov2-large", 224),
    "sam-vit-b-16": ("sam", "facebook/sam-vit-base", 1024),
    "sam-vit-l-16": ("sam", "facebook/sam-vit-large", 1024),
    "sam-vit-h-16": ("sam", "facebook/sam-vit-huge", 1024),
}


def known_encoders() -> tuple[str, ...]:
    return tuple(sorted(_HUB))


def build_encoder(name: str, resolution: int | None = None) -> Encoder:
    """Instantiate a registry encoder with pretrained weights (fatal if missing)."""
    if name not in _HUB:
        raise ValueError(f"unknown encoder {name!r}; known: {', '.join(known_encoders())}")
    family, checkpoint, native_res = _HUB[name]
    res = resolution or native_res
    try:
        import transformers
    except ImportError as exc:
        raise EncoderWeightsError(
            "the 'transformers' package is required for registry encoders "
            "(pip install unifex-extractor[hub])"
        ) from exc
    try:
        if family == "clip":
            model = transformers.CLIPVisionModelWithProjection.from_pretrained(checkpoint)
            model.eval()
            return PooledVisionEncoder(
                name, res, CLIP_MEAN, CLIP_STD,
                lambda batch: model(pixel_values=batch).image_embeds,
                "projected image embedding",
            )
        if family == "siglip":
            model = transformers.SiglipVisionModel.from_pretrained(checkpoint)
            model.eval()
            return PooledVisionEncoder(
                name, res, HALF_MEAN, HALF_STD,
                lambda batch: batch_pooler(model, batch),
                "attention-pooled head output",
            )
        if family == "dinov2":
            model = transformers.AutoModel.from_pretrained(checkpoint)
            model.eval()
            return PooledVisionEncoder(
                name, res, IMAGENET_MEAN, IMAGENET_STD,
                lambda batch: model(pixel_values=batch).pooler_output,
                "class token (pooler output)",
            )
        if family == "sam":
            model = transformers.SamModel.from_pretrained(checkpoint)
            model.eval()
            vision = model.vision_encoder
            return SamStyleEncoder(
                name, res, IMAGENET_MEAN, IMAGENET_STD,
                trunk=lambda batch: _sam_trunk(vision, batch),
                neck=lambda feats: vision.neck(feats),
            )
    except (OSError, ValueError) as exc:
        raise EncoderWeightsError(f"cannot obtain weights for {checkpoint!r}: {exc}") from exc
    raise ValueError(f"unhandled encoder family {family!r}")


def batch_pooler(model, batch):
    out = model(pixel_values=batch)
    pooled = getattr(out, "pooler_output", None)
    if pooled is None:
        pooled = out.last_hidden_state.mean(dim=1)
    return pooled


def _sam_trunk(vision_encoder, batch):
    """Patch embeddings (B, H, W, C) right before the downscaling neck."""
    hidden = vision_encoder.patch_embed(batch)
    if vision_encoder.pos_embed is not None:
        hidden = hidden + vision_encoder.pos_embed
    for layer in vision_encoder.layers:
        hidden = layer(hidden)[0]
    return hidden

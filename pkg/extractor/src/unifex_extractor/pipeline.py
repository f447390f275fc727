"""Batched extraction: image list -> EMB1 embeddings + aligned manifest."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .encoders import Encoder
from .imagelist import ImageEntry, read_image_list
from .preprocess import preprocess
from .spec import ExtractSpec
from .writer import write_emb1, write_manifest

logger = logging.getLogger(__name__)


@dataclass
class ExtractReport:
    rows: int
    dim: int
    skipped: list[str]
    encoder: str
    extraction_point: str
    output_convention: str


def _load_entry(entry: ImageEntry, resolution: int, encoder: Encoder):
    try:
        with Image.open(entry.path) as img:
            return preprocess(img, resolution, encoder.mean, encoder.std)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        logger.warning("skipping undecodable image %s: %s", entry.path, exc)
        return None


def extract(
    spec: ExtractSpec, encoder: Encoder, out_embeddings, out_manifest, out_metadata=None
) -> ExtractReport:
    """Run the encoder over every decodable image, in input-list order.

    Row i of the EMB1 file corresponds to record i of the manifest
    (positional pairing). Undecodable images are skipped and logged;
    everything else is fatal.
    """
    encoder.check_point(spec.extraction_point)
    resolution = spec.resolution or encoder.resolution
    entries = read_image_list(spec.image_list)

    rows: list[np.ndarray] = []
    kept: list[ImageEntry] = []
    skipped: list[str] = []
    batch_tensors: list[torch.Tensor] = []
    batch_entries: list[ImageEntry] = []

    def flush():
        if not batch_tensors:
            return
        stacked = torch.stack(batch_tensors)
        out = encoder.embed(stacked, spec.extraction_point)
        rows.append(out.detach().cpu().to(torch.float32).numpy())
        kept.extend(batch_entries)
        batch_tensors.clear()
        batch_entries.clear()

    for entry in entries:
        tensor = _load_entry(entry, resolution, encoder)
        if tensor is None:
            skipped.append(entry.path)
            continue
        batch_tensors.append(tensor)
        batch_entries.append(entry)
        if len(batch_tensors) >= spec.batch_size:
            flush()
    flush()

    if rows:
        values = np.concatenate(rows, axis=0)
    else:
        values = np.zeros((0, 1), dtype=np.float32)
    write_emb1(values, out_embeddings)
    write_manifest(
        ((e.path, e.class_id, spec.split, e.domain) for e in kept), out_manifest
    )
    report = ExtractReport(
        rows=values.shape[0],
        dim=values.shape[1],
        skipped=skipped,
        encoder=encoder.name,
        extraction_point=spec.extraction_point,
        output_convention=encoder.output_convention(spec.extraction_point),
    )
    if out_metadata is not None:
        with open(out_metadata, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "encoder": report.encoder,
                    "extraction_point": report.extraction_point,
                    "output_convention": report.output_convention,
                    "resolution": resolution,
                    "rows": report.rows,
                    "dim": report.dim,
                    "skipped": report.skipped,
                    "split": spec.split,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    return report

import logging

import numpy as np
import pytest

import unifex  # the probing toolkit validates the exported files
from unifex_extractor import (
    POINT_DEFAULT,
    POINT_SAM_POST,
    POINT_SAM_PRE,
    ExtractSpec,
    extract,
    read_image_list,
)


def run_extract(encoder, image_list, tmp_path, **spec_kw):
    spec = ExtractSpec(
        encoder=encoder.name, image_list=str(image_list), batch_size=4, **spec_kw
    )
    tmp_path.mkdir(parents=True, exist_ok=True)
    emb_path = tmp_path / "out.emb"
    man_path = tmp_path / "out.tsv"
    meta_path = tmp_path / "out.json"
    report = extract(spec, encoder, emb_path, man_path, meta_path)
    return report, emb_path, man_path


def test_exported_files_load_in_primary_toolkit(pooled_encoder, image_list, tmp_path):
    report, emb_path, man_path = run_extract(pooled_encoder, image_list, tmp_path)
    emb = unifex.load_embeddings(emb_path)
    man = unifex.load_manifest(man_path)
    assert emb.rows == report.rows == 10
    assert emb.dim == report.dim == 24
    assert len(man) == emb.rows


def test_row_order_matches_input_list(pooled_encoder, image_list, tmp_path):
    _, _, man_path = run_extract(pooled_encoder, image_list, tmp_path)
    man = unifex.load_manifest(man_path)
    entries = read_image_list(image_list)
    assert list(man.sample_ids) == [e.path for e in entries]
    assert list(man.class_ids) == [e.class_id for e in entries]
    assert list(man.domains) == [e.domain for e in entries]


def test_repeated_image_rows_are_identical(pooled_encoder, image_corpus, tmp_path):
    paths, _ = image_corpus
    list_path = tmp_path / "dup.tsv"
    list_path.write_text(f"{paths[0]}\t0\td\n{paths[1]}\t1\td\n{paths[0]}\t0\td\n")
    _, emb_path, _ = run_extract(pooled_encoder, list_path, tmp_path)
    emb = unifex.load_embeddings(emb_path)
    assert np.abs(emb.values[0] - emb.values[2]).max() <= 1e-5


def test_repeated_extraction_is_deterministic(pooled_encoder, image_list, tmp_path):
    _, emb1, _ = run_extract(pooled_encoder, image_list, tmp_path / "a")
    _, emb2, _ = run_extract(pooled_encoder, image_list, tmp_path / "b")
    a = unifex.load_embeddings(emb1).values
    b = unifex.load_embeddings(emb2).values
    assert np.abs(a - b).max() <= 1e-5


def test_undecodable_image_skipped_and_logged(pooled_encoder, image_corpus, tmp_path, caplog):
    paths, corrupt = image_corpus
    list_path = tmp_path / "with_bad.tsv"
    lines = [f"{paths[0]}\t0\td", f"{corrupt}\t1\td", f"{paths[1]}\t2\td"]
    list_path.write_text("\n".join(lines) + "\n")
    with caplog.at_level(logging.WARNING, logger="unifex_extractor.pipeline"):
        report, emb_path, man_path = run_extract(pooled_encoder, list_path, tmp_path)
    assert report.rows == 2
    assert report.skipped == [str(corrupt)]
    assert any("skipping undecodable" in r.message for r in caplog.records)
    man = unifex.load_manifest(man_path)
    assert list(man.sample_ids) == [str(paths[0]), str(paths[1])]


def test_sam_extraction_points_have_different_dims(sam_encoder, image_list, tmp_path):
    rep_pre, emb_pre, _ = run_extract(
        sam_encoder, image_list, tmp_path / "pre", extraction_point=POINT_SAM_PRE
    )
    rep_post, emb_post, _ = run_extract(
        sam_encoder, image_list, tmp_path / "post", extraction_point=POINT_SAM_POST
    )
    assert rep_pre.dim == 20  # trunk channels, average-pooled
    assert rep_post.dim == 8  # neck channels, average-pooled + flattened
    assert unifex.load_embeddings(emb_pre).dim == 20
    assert unifex.load_embeddings(emb_post).dim == 8


def test_pooled_encoder_rejects_sam_points(pooled_encoder, image_list, tmp_path):
    with pytest.raises(ValueError, match="extraction points"):
        run_extract(pooled_encoder, image_list, tmp_path, extraction_point=POINT_SAM_PRE)


def test_batching_does_not_change_values(pooled_encoder, image_list, tmp_path):
    spec1 = ExtractSpec(encoder="x", image_list=str(image_list), batch_size=1)
    spec7 = ExtractSpec(encoder="x", image_list=str(image_list), batch_size=7)
    out1 = tmp_path / "b1.emb"
    out7 = tmp_path / "b7.emb"
    extract(spec1, pooled_encoder, out1, tmp_path / "b1.tsv")
    extract(spec7, pooled_encoder, out7, tmp_path / "b7.tsv")
    a = unifex.load_embeddings(out1).values
    b = unifex.load_embeddings(out7).values
    assert np.abs(a - b).max() <= 1e-5


def test_split_field_written(pooled_encoder, image_list, tmp_path):
    _, _, man_path = run_extract(pooled_encoder, image_list, tmp_path, split="index")
    man = unifex.load_manifest(man_path)
    assert set(man.splits) == {"index"}


def test_metadata_records_convention(pooled_encoder, image_list, tmp_path):
    import json

    report, _, _ = run_extract(pooled_encoder, image_list, tmp_path)
    meta = json.loads((tmp_path / "out.json").read_text())
    assert meta["extraction_point"] == POINT_DEFAULT
    assert meta["output_convention"] == report.output_convention
    assert meta["rows"] == 10


def test_spec_validation():
    with pytest.raises(ValueError):
        ExtractSpec(encoder="e", image_list="x", extraction_point="cls")
    with pytest.raises(ValueError):
        ExtractSpec(encoder="e", image_list="x", batch_size=0)
    with pytest.raises(ValueError):
        ExtractSpec(encoder="e", image_list="x", split="validation")

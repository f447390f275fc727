"""Command-line exporter: image list in, EMB1 + manifest out."""

from __future__ import annotations

import argparse
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unifex-extract",
        description="Export frozen vision-encoder embeddings to EMB1 + manifest",
    )
    parser.add_argument("--images", help="list file: path<TAB>class_id<TAB>domain")
    parser.add_argument("--encoder")
    parser.add_argument(
        "--extraction-point",
        default="cls_or_pooled_default",
        choices=["cls_or_pooled_default", "sam_pre_downscale_avg", "sam_post_downscale_avg_flatten"],
    )
    parser.add_argument("--resolution", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--split", default="train", choices=["train", "index", "query"])
    parser.add_argument("--out-embeddings")
    parser.add_argument("--out-manifest")
    parser.add_argument("--out-metadata", default=None)
    parser.add_argument("--list-encoders", action="store_true")
    return parser


_REQUIRED_FOR_EXTRACTION = ("images", "encoder", "out_embeddings", "out_manifest")


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    from .encoders import EncoderWeightsError, build_encoder, known_encoders
    from .pipeline import extract
    from .spec import ExtractSpec

    if args.list_encoders:
        print("\n".join(known_encoders()))
        return 0
    missing = [f"--{name.replace('_', '-')}" for name in _REQUIRED_FOR_EXTRACTION
               if getattr(args, name) is None]
    if missing:
        print(f"usage error: missing required arguments: {', '.join(missing)}", file=sys.stderr)
        return 2
    try:
        encoder = build_encoder(args.encoder, resolution=args.resolution)
    except EncoderWeightsError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    try:
        spec = ExtractSpec(
            encoder=args.encoder,
            image_list=args.images,
            extraction_point=args.extraction_point,
            batch_size=args.batch_size,
            resolution=args.resolution,
            split=args.split,
        )
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    report = extract(spec, encoder, args.out_embeddings, args.out_manifest, args.out_metadata)
    print(
        f"wrote {report.rows} x {report.dim} embeddings "
        f"({report.output_convention}); skipped {len(report.skipped)}"
    )
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

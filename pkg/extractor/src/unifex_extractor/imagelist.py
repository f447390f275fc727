"""Image-list file parsing: ``path <TAB> class_id <TAB> domain`` per line."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ImageEntry:
    path: str
    class_id: int
    domain: str


def read_image_list(path) -> list[ImageEntry]:
    entries: list[ImageEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh.read().split("\n"), start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(
                    f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            img, cid_str, domain = fields
            try:
                cid = int(cid_str)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: class_id {cid_str!r} is not an integer")
            if cid < 0:
                raise ValueError(f"{path}: line {lineno}: class_id must be >= 0")
            entries.append(ImageEntry(path=img, class_id=cid, domain=domain))
    return entries

"""Per-scan manifest governing patient-level dataset splits.

CSV schema (UTF-8, LF line endings):

    scan_id,patient_id,video_path,flow_path,label,split

``label`` is 0/1 and ``split`` is train/val/test, or empty before a
split has been assigned.  Scan ids are unique and every patient lives
in exactly one split so no patient straddles train/val/test.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

from .errors import ManifestError

HEADER = ["scan_id", "patient_id", "video_path", "flow_path", "label", "split"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    scan_id: str
    patient_id: str
    video_path: str
    flow_path: str
    label: int
    split: str = ""


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]

    def __post_init__(self):
        seen = set()
        patient_split: dict[str, str] = {}
        for r in self.rows:
            if r.scan_id in seen:
                raise ManifestError(f"duplicate scan_id {r.scan_id!r}")
            seen.add(r.scan_id)
            if r.label not in (0, 1):
                raise ManifestError(f"scan {r.scan_id!r}: label {r.label!r} not in {{0,1}}")
            if r.split not in SPLITS + ("",):
                raise ManifestError(f"scan {r.scan_id!r}: unknown split {r.split!r}")
            prev = patient_split.setdefault(r.patient_id, r.split)
            if prev != r.split:
                raise ManifestError(
                    f"patient {r.patient_id!r} appears in splits {prev!r} and {r.split!r}"
                )
        object.__setattr__(self, "rows", tuple(self.rows))

    def subset(self, split: str) -> "Manifest":
        return Manifest(tuple(r for r in self.rows if r.split == split))

    def patients(self) -> dict[str, list[ManifestRow]]:
        by_patient: dict[str, list[ManifestRow]] = {}
        for r in self.rows:
            by_patient.setdefault(r.patient_id, []).append(r)
        return by_patient

    def with_splits(self, assignment: dict[str, str]) -> "Manifest":
        """Return a copy with per-patient split labels applied."""
        return Manifest(
            tuple(replace(r, split=assignment[r.patient_id]) for r in self.rows)
        )


def write_manifest(path, manifest: Manifest) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in manifest.rows:
        writer.writerow([r.scan_id, r.patient_id, r.video_path, r.flow_path, r.label, r.split])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest file") from None
        if header != HEADER:
            raise ManifestError(f"{path}: header {header} != {HEADER}")
        rows = []
        for line in reader:
            if not line:
                continue
            if len(line) != len(HEADER):
                raise ManifestError(f"{path}: malformed row {line}")
            sid, pid, vpath, fpath, label, split = line
            try:
                label_int = int(label)
            except ValueError:
                raise ManifestError(f"{path}: non-integer label {label!r}") from None
            rows.append(ManifestRow(sid, pid, vpath, fpath, label_int, split))
    return Manifest(tuple(rows))

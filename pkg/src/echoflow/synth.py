"""Deterministic echo-like synthetic corpus.

Each video shows a bright elliptical wall around a dark chamber inside
a fan-shaped scanning sector, pulsating sinusoidally.  The label is
driven purely by the contraction amplitude (weak contraction = event),
and the resting geometry is drawn from the same distribution for both
classes.  The ``static`` switch freezes every frame at the resting
phase, which produces videos whose per-frame distribution carries no
label information at all: a motion-blind model cannot beat chance on
them, which is exactly the control needed to show that the temporal
channel carries the signal.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import etns
from .errors import ManifestError
from .manifest import Manifest, ManifestRow, write_manifest
from .video import VideoTensor

# Amplitudes below this threshold label the scan as an event.
AMPLITUDE_THRESHOLD = 0.3


@dataclass(frozen=True)
class SynthParams:
    frames: int = 48
    resolution: int = 32
    sector_half_angle_deg: float = 38.0
    center: tuple = (0.58, 0.50)  # (y, x) as fractions of resolution
    axes: tuple = (0.30, 0.24)    # (ay, ax) as fractions of resolution
    amplitude: float = 0.5
    wall_thickness: float = 0.14
    noise: float = 0.03
    period: int = 16
    seed: int = 0
    static: bool = False

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude must be in [0,1]; got {self.amplitude}")
        if self.period < 4:
            raise ValueError(f"period must be >= 4 frames; got {self.period}")
        if self.resolution < 16:
            raise ValueError(f"resolution must be >= 16; got {self.resolution}")


def sector_mask_array(res: int, half_angle_deg: float) -> np.ndarray:
    """Fan-shaped sector with apex at the top center."""
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)
    apex_y, apex_x = -0.05 * res, (res - 1) / 2.0
    dy = ys - apex_y
    dx = xs - apex_x
    radius = np.hypot(dy, dx)
    angle = np.degrees(np.arctan2(dx, dy))  # 0 = straight down
    return (np.abs(angle) <= half_angle_deg) & (radius <= 1.12 * res) & (radius >= 0.08 * res)


def gen_video(params: SynthParams) -> tuple[VideoTensor, int]:
    """One labeled synthetic scan; label 1 iff the wall barely moves."""
    rng = np.random.default_rng(np.random.SeedSequence((params.seed, 0x5E17)))
    res = params.resolution
    cy = params.center[0] * res + rng.uniform(-1.5, 1.5)
    cx = params.center[1] * res + rng.uniform(-1.5, 1.5)
    ay = params.axes[0] * res * rng.uniform(0.9, 1.1)
    ax = params.axes[1] * res * rng.uniform(0.9, 1.1)

    sector = sector_mask_array(res, params.sector_half_angle_deg)
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)

    frames = np.empty((params.frames, res, res, 1), dtype=np.float32)
    for t in range(params.frames):
        phase = 0.0 if params.static else 2.0 * np.pi * t / params.period
        squeeze = 1.0 - 0.5 * params.amplitude * (1.0 - np.cos(phase))
        e = np.sqrt(((ys - cy) / (ay * squeeze)) ** 2 + ((xs - cx) / (ax * squeeze)) ** 2)
        wall = 0.85 * np.exp(-(((e - 1.0) / params.wall_thickness) ** 2))
        chamber = np.where(e < 1.0, 0.06, 0.12)
        img = (wall + chamber) * sector
        img += rng.normal(0.0, params.noise, size=img.shape) * sector
        frames[t, :, :, 0] = np.clip(img, 0.0, 1.0)
    label = 1 if params.amplitude < AMPLITUDE_THRESHOLD else 0
    return VideoTensor(frames), label


def _draw_amplitude(label: int, rng: np.random.Generator) -> float:
    # Well-separated class-conditional amplitudes; the event class
    # contracts weakly, mirroring depressed wall motion.
    if label == 1:
        return float(rng.uniform(0.05, 0.18))
    return float(rng.uniform(0.45, 0.80))


def gen_dataset(out_dir, n: int, positive_fraction: float = 0.25, seed: int = 0,
                frames: int = 48, resolution: int = 32, scans_per_patient: int = 1,
                static: bool = False) -> Manifest:
    """Write ``n`` scans (ETNS1) plus a manifest under ``out_dir``.

    The positive count is ``round(n_patients * positive_fraction)``
    applied at the patient level; all scans of a patient share its
    label.  Re-running with the same seed reproduces every byte.
    """
    if n < 8:
        raise ValueError(f"need n >= 8 scans; got {n}")
    if n % scans_per_patient:
        raise ValueError("n must be divisible by scans_per_patient")
    n_patients = n // scans_per_patient
    n_pos = int(round(n_patients * positive_fraction))
    labels = [1] * n_pos + [0] * (n_patients - n_pos)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    rng.shuffle(labels)

    video_dir = os.path.join(out_dir, "videos")
    os.makedirs(video_dir, exist_ok=True)
    rows = []
    scan_idx = 0
    for p_idx, label in enumerate(labels):
        pid = f"p{p_idx:04d}"
        for _ in range(scans_per_patient):
            sid = f"s{scan_idx:04d}"
            amplitude = _draw_amplitude(label, rng)
            params = SynthParams(frames=frames, resolution=resolution,
                                 amplitude=amplitude, seed=seed * 1_000_003 + scan_idx,
                                 static=static)
            video, video_label = gen_video(params)
            assert video_label == label
            rel = os.path.join("videos", f"{sid}.etns")
            etns.write_tensor(os.path.join(out_dir, rel), video.data)
            rows.append(ManifestRow(sid, pid, rel, "", label, ""))
            scan_idx += 1
    manifest = Manifest(tuple(rows))
    write_manifest(os.path.join(out_dir, "manifest.csv"), manifest)
    return manifest


def stratified_split(manifest: Manifest, ratios=(66, 17, 17), seed: int = 0) -> Manifest:
    """Assign train/val/test at the patient level, stratified by class.

    Counts per split use largest-remainder rounding within each class,
    so per-split class proportions stay within one patient of exact.
    """
    by_patient = manifest.patients()
    label_of = {}
    for pid, rows in by_patient.items():
        labels = {r.label for r in rows}
        if len(labels) != 1:
            raise ManifestError(f"patient {pid!r} has conflicting labels")
        label_of[pid] = labels.pop()

    total = float(sum(ratios))
    fracs = [r / total for r in ratios]
    split_names = ("train", "val", "test")
    assignment: dict[str, str] = {}
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B117)))
    for label in (0, 1):
        pids = sorted(p for p, l in label_of.items() if l == label)
        rng.shuffle(pids)
        quota = [len(pids) * f for f in fracs]
        counts = [int(q) for q in quota]
        remainders = np.asarray(quota) - np.asarray(counts)
        for i in np.argsort(-remainders)[: len(pids) - sum(counts)]:
            counts[int(i)] += 1
        lo = 0
        for name, cnt in zip(split_names, counts):
            if cnt < 1:
                raise ManifestError(
                    f"too few patients: class {label} gets {cnt} in split {name!r}"
                )
            for pid in pids[lo : lo + cnt]:
                assignment[pid] = name
            lo += cnt
    return manifest.with_splits(assignment)


def with_flow_paths(manifest: Manifest, flow_dir: str = "flow") -> Manifest:
    """Point each row's flow_path at the conventional per-scan file."""
    rows = tuple(
        replace(r, flow_path=os.path.join(flow_dir, f"{r.scan_id}.etns"))
        for r in manifest.rows
    )
    return Manifest(rows)

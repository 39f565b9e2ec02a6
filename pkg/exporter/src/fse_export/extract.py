"""Walk a class-per-subdirectory image folder and export embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from fse_export.backbone import load_backbone
from fse_export.writer import write_embeddings

log = logging.getLogger("fse_export")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}

# channel statistics the torchvision classification models were trained with
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ExportError(Exception):
    """The folder layout cannot be exported."""


@dataclass(frozen=True)
class ExportJob:
    images: str
    backbone: str = "resnet18"
    out: str = "embeddings.bin"
    checkpoint: str | None = None
    batch_size: int = 32
    size: int = 84

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.size < 8:
            raise ValueError("size must be at least 8 pixels")


def _class_dirs(root: Path) -> list[Path]:
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise ExportError(f"{root}: no class subdirectories")
    return dirs


def _load_image(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB").resize((size, size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return ((arr - _MEAN) / _STD).transpose(2, 0, 1)


@torch.no_grad()
def extract(job: ExportJob) -> dict:
    """Export one feature row per readable image; returns a manifest.

    Labels follow the lexicographic order of the class subdirectories.
    Unreadable images are skipped with a warning and listed in the
    manifest; a class with no readable image is a hard error.
    """
    root = Path(job.images)
    if not root.is_dir():
        raise ExportError(f"{job.images}: not a directory")
    net, width = load_backbone(job.backbone, job.checkpoint)

    rows, labels, skipped = [], [], []
    class_names = []
    for label, class_dir in enumerate(_class_dirs(root)):
        class_names.append(class_dir.name)
        batch: list[np.ndarray] = []

        def flush(batch=None):
            if batch:
                feats = net(torch.from_numpy(np.stack(batch)))
                rows.append(feats.numpy())

        count = 0
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        for path in files:
            try:
                batch.append(_load_image(path, job.size))
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                skipped.append(str(path))
                continue
            count += 1
            if len(batch) == job.batch_size:
                flush(batch)
                batch = []
        flush(batch)
        if count == 0:
            raise ExportError(f"{class_dir}: no readable image in class")
        labels.extend([label] * count)

    features = np.concatenate(rows, axis=0)
    assert features.shape[1] == width
    write_embeddings(features, np.array(labels), len(class_names), job.out)
    return {
        "out": str(job.out),
        "backbone": job.backbone,
        "dim": width,
        "samples": len(labels),
        "classes": class_names,
        "skipped": skipped,
    }

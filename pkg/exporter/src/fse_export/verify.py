"""Re-read an exported file and report its invariants."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from fse_export.writer import FormatError, read_embeddings


@dataclass(frozen=True)
class VerifyReport:
    dim: int
    samples: int
    num_classes: int
    per_class: dict
    finite: bool

    def render(self) -> str:
        lines = [
            f"dim={self.dim} samples={self.samples} classes={self.num_classes} "
            f"finite={self.finite}"
        ]
        lines += [f"  class {k}: {v} samples" for k, v in sorted(self.per_class.items())]
        return "\n".join(lines)


def verify(path) -> VerifyReport:
    features, labels, num_classes = read_embeddings(path)
    counts = Counter(int(l) for l in labels)
    missing = [k for k in range(num_classes) if counts.get(k, 0) == 0]
    if missing:
        raise FormatError(f"{path}: classes with no samples: {missing}")
    return VerifyReport(
        dim=features.shape[1],
        samples=features.shape[0],
        num_classes=num_classes,
        per_class=dict(counts),
        finite=bool(np.all(np.isfinite(features))),
    )

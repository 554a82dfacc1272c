"""Record types shared by the detector, the evaluator and the I/O layer."""

from __future__ import annotations

from dataclasses import dataclass

# column order of the per-class results table
CLASS_NAMES = ("car", "van", "bus", "others")


@dataclass(frozen=True)
class Detection:
    frame_id: int
    class_id: int
    bbox: tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    frame_id: int
    class_id: int
    bbox: tuple[float, float, float, float]
    ignore: bool = False

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if x1 < x0 or y1 < y0:
            raise ValueError(f"invalid ground-truth box {self.bbox}")

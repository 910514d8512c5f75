"""Shared domain types: images, the adversarial criterion, and l2 distortion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

Label = int


@dataclass(frozen=True)
class Image:
    """A flat pixel buffer with explicit (channels, width, height) geometry.

    Data is stored as float64. The standard pixel domain is the unit box
    [0, 1]; range membership is enforced by :func:`clamp_image` at query
    boundaries rather than in the constructor, because the 2-D toy domain
    deliberately uses unbounded coordinates. Instances copy and freeze
    their buffer, so they can be shared between workers as plain values.
    """

    data: np.ndarray
    channels: int
    width: int
    height: int

    def __post_init__(self):
        if self.channels < 1 or self.width < 1 or self.height < 1:
            raise ShapeError("image dimensions must all be >= 1")
        arr = np.array(self.data, dtype=np.float64).reshape(-1)
        expected = self.channels * self.width * self.height
        if arr.size != expected:
            raise ShapeError(
                f"buffer holds {arr.size} values, expected "
                f"{self.channels}x{self.width}x{self.height} = {expected}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_chw(cls, arr: np.ndarray) -> "Image":
        """Build an image from a (C, W, H) array."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"expected a 3-d (C, W, H) array, got ndim={arr.ndim}")
        c, w, h = arr.shape
        return cls(arr.reshape(-1), c, w, h)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.channels, self.width, self.height)

    @property
    def pixel_count(self) -> int:
        return self.channels * self.width * self.height

    def as_chw(self) -> np.ndarray:
        """Read-only (C, W, H) view of the buffer."""
        return self.data.reshape(self.channels, self.width, self.height)


@dataclass(frozen=True)
class Criterion:
    """The adversarial success predicate.

    Targeted mode succeeds when the oracle returns ``reference_label``;
    untargeted mode succeeds when it returns anything else (the reference
    is then the ground-truth label of the source image).
    """

    targeted: bool
    reference_label: Label

    def __post_init__(self):
        if self.reference_label < 0:
            raise ValueError("reference_label must be a non-negative class index")

    def satisfied(self, predicted: Label) -> bool:
        if self.targeted:
            return predicted == self.reference_label
        return predicted != self.reference_label


def criterion_satisfied(criterion: Criterion, predicted: Label) -> bool:
    return criterion.satisfied(predicted)


def l2_distance(a: Image, b: Image) -> float:
    """Euclidean norm of the elementwise difference between two images."""
    if a.dims != b.dims:
        raise ShapeError(f"dimension mismatch: {a.dims} vs {b.dims}")
    return float(np.linalg.norm(a.data - b.data))


def clamp_image(a: Image) -> Image:
    """Project every pixel into [0, 1], preserving shape."""
    return Image(np.clip(a.data, 0.0, 1.0), a.channels, a.width, a.height)

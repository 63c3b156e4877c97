"""Exception hierarchy shared by every component of the segmentation engine."""
from __future__ import annotations


class SegmentationError(Exception):
    """Base class for all errors raised by the engine."""


class BadConfig(SegmentationError):
    """A configuration value violates its documented invariant."""


class IoFailure(SegmentationError):
    """A file could not be read or written."""


class ShapeMismatch(SegmentationError):
    """Operand extents are inconsistent."""


class NonFiniteInput(SegmentationError):
    """NaN or infinite values where finite values are required."""


# nifti-io


class NiftiError(SegmentationError):
    """Base class for NIfTI-1 parse errors."""


class BadMagic(NiftiError):
    """Not a single-file NIfTI-1 volume."""


class UnsupportedDatatype(NiftiError):
    """Datatype code, bitpix or file flavour outside the supported set."""


class Truncated(NiftiError):
    """The byte stream is shorter than the header promises."""


class BadDims(NiftiError):
    """Rank or extents outside the accepted range."""


# preprocessing / sample store


class PreprocessError(SegmentationError):
    """Base class for preprocessing failures."""


class UnknownLabel(PreprocessError):
    """A mask holds a label outside the expected set."""


class TargetTooLarge(PreprocessError):
    """The crop target exceeds the source extents."""


class MissingInput(PreprocessError):
    """A subject directory lacks one of its modality files."""


class SampleStoreError(SegmentationError):
    """Base class for SMP1 / CKPT codec errors."""


class CorruptSample(SampleStoreError):
    """Magic, header or payload of a stored array is inconsistent."""


class CorruptCheckpoint(SampleStoreError):
    """Magic, header or payload of a checkpoint is inconsistent."""


# autodiff


class AutodiffError(SegmentationError):
    """Base class for tensor and tape errors."""


class EvenKernel(AutodiffError):
    """Convolution kernels must have an odd extent."""


class OddExtent(AutodiffError):
    """Pooling requires even spatial extents."""


class NotOneHot(AutodiffError):
    """A loss target is not one-hot along the channel axis."""


class NotScalarRoot(AutodiffError):
    """backward() was called on a non-scalar or untracked tensor."""


class IndivisibleHeads(AutodiffError):
    """d_model is not divisible by the number of attention heads."""


# metrics


class MetricsError(SegmentationError):
    """Base class for metric computation errors."""


class BadLabel(MetricsError):
    """A label grid holds values outside {0,1,2,3}."""


class EmptyGrid(MetricsError):
    """Confusion counts over zero voxels."""


# training


class TrainingError(SegmentationError):
    """Base class for training failures."""


class TooFewSamples(TrainingError):
    """The dataset cannot be split into non-empty train and validation sets."""


class MalformedRunLog(TrainingError):
    """A RunLog CSV is empty, has the wrong header or unparsable cells."""


class NonFiniteLoss(TrainingError):
    """The training loss became NaN or infinite."""

    def __init__(self, message: str, epoch: int, step: int) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.step = step


__all__ = [
    "SegmentationError",
    "BadConfig",
    "IoFailure",
    "ShapeMismatch",
    "NonFiniteInput",
    "NiftiError",
    "BadMagic",
    "UnsupportedDatatype",
    "Truncated",
    "BadDims",
    "PreprocessError",
    "UnknownLabel",
    "TargetTooLarge",
    "MissingInput",
    "SampleStoreError",
    "CorruptSample",
    "CorruptCheckpoint",
    "AutodiffError",
    "EvenKernel",
    "OddExtent",
    "NotOneHot",
    "NotScalarRoot",
    "IndivisibleHeads",
    "MetricsError",
    "BadLabel",
    "EmptyGrid",
    "TrainingError",
    "TooFewSamples",
    "NonFiniteLoss",
    "MalformedRunLog",
]

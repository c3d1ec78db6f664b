"""Exception types shared across the toolkit."""

from __future__ import annotations


class SplitforgeError(Exception):
    """Base class for every error raised by this package."""


class ParseError(SplitforgeError):
    """A config document violates the schema.  Carries the offending path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class ValidationError(SplitforgeError):
    """An architecture is structurally broken (shapes, refs, divisibility)."""


class NonDivisibleError(SplitforgeError):
    """A splitting factor does not divide an affected channel count."""

    def __init__(self, block: int, layer: str, factor: int, channels: int):
        super().__init__(
            f"block {block}, layer {layer!r}: factor {factor} does not divide "
            f"{channels} channels"
        )
        self.block = block
        self.layer = layer
        self.factor = factor
        self.channels = channels


class PlanLengthMismatch(SplitforgeError):
    """A split plan's factor list does not match the architecture."""


class UnresolvableWiring(SplitforgeError):
    """A branch wiring request cannot be satisfied without cross-branch reads."""


class SharedDepthTooLarge(SplitforgeError):
    """shared_depth exceeds the number of conv layers in the architecture."""


class NotASplitArchitecture(SplitforgeError):
    """An operation requiring a transform-produced architecture got a plain one."""


class ShapeMismatch(SplitforgeError):
    """Runtime tensor shapes disagree with the architecture."""


class LabelOutOfRange(SplitforgeError):
    """A dataset record carries a label outside the valid class range."""

    def __init__(self, record: int, label: int):
        super().__init__(f"record {record}: label {label} out of range")
        self.record = record
        self.label = label


class BadLength(SplitforgeError):
    """A binary dataset file length is not a whole number of records."""


class EmptySplit(SplitforgeError):
    """A train/test split would leave one side empty."""


class DivergedLoss(SplitforgeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class ScheduleInvalid(SplitforgeError):
    """A memory schedule cannot produce a topologically valid op order."""


class MissingCell(SplitforgeError):
    """A table-backed evaluator was queried for a (block, factor) it lacks."""

    def __init__(self, block: int, factor: int):
        super().__init__(f"no stored accuracy for block {block}, factor {factor}")
        self.block = block
        self.factor = factor


class EvaluatorFailure(SplitforgeError):
    """An accuracy evaluator could not produce a usable result."""


class NonZeroExit(EvaluatorFailure):
    """External evaluator process exited with a non-zero status."""

    def __init__(self, code: int, stderr_tail: str):
        super().__init__(f"evaluator exited with status {code}: {stderr_tail.strip()}")
        self.code = code
        self.stderr_tail = stderr_tail


class UnparseableOutput(EvaluatorFailure):
    """External evaluator stdout did not end with an accuracy in [0, 1]."""


class EvaluatorTimeout(EvaluatorFailure):
    """External evaluator exceeded its time budget."""

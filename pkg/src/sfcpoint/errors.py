"""Exception types shared across the package.

Every error carries a short ``code`` so the CLI can report failures as
``error: <Code>: <detail>``.
"""


class SfcPointError(ValueError):
    code = "Error"

    def __init__(self, detail=""):
        super().__init__(detail)
        self.detail = detail

    def __str__(self):
        return f"{self.code}: {self.detail}" if self.detail else self.code


class InvalidCloud(SfcPointError):
    code = "InvalidCloud"


class InvalidBox(SfcPointError):
    code = "InvalidBox"


class EmptyCloud(SfcPointError):
    code = "EmptyCloud"


class CodeOutOfRange(SfcPointError):
    code = "CodeOutOfRange"


class BatchOverflow(SfcPointError):
    code = "BatchOverflow"


class TooFewPoints(SfcPointError):
    code = "TooFewPoints"


class LengthMismatch(SfcPointError):
    code = "LengthMismatch"


class NonFinite(SfcPointError):
    code = "NonFinite"


class DuplicateCell(SfcPointError):
    code = "DuplicateCell"


class DimensionMismatch(SfcPointError):
    code = "DimensionMismatch"


class SingularPose(SfcPointError):
    code = "SingularPose"


class SequenceOrder(SfcPointError):
    code = "SequenceOrder"


class FrameMismatch(SfcPointError):
    code = "FrameMismatch"


class ShapeMismatch(SfcPointError):
    code = "ShapeMismatch"


class ClassOutOfRange(SfcPointError):
    code = "ClassOutOfRange"


class NoValidClasses(SfcPointError):
    code = "NoValidClasses"


class FormatError(SfcPointError):
    code = "FormatError"


class GridOverflow(SfcPointError):
    code = "GridOverflow"

    def __init__(self, axis, value):
        super().__init__(f"axis {axis} needs cell index {value}, beyond the grid depth")
        self.axis = axis
        self.value = value

"""Exception hierarchy shared by all modules."""


class PseudoLidarError(ValueError):
    """Base class for every error raised by this package."""


# --- parsing / serialization -------------------------------------------------

class MissingKey(PseudoLidarError):
    def __init__(self, name):
        super().__init__(f"missing calibration key {name!r}")
        self.name = name


class MalformedNumber(PseudoLidarError):
    def __init__(self, line, field=None):
        where = f"line {line}" if field is None else f"line {line}, field {field}"
        super().__init__(f"malformed number at {where}")
        self.line = line
        self.field = field


class WrongArity(PseudoLidarError):
    def __init__(self, key, expected, got):
        super().__init__(f"{key}: expected {expected} values, got {got}")
        self.key = key
        self.expected = expected
        self.got = got


class WrongFieldCount(PseudoLidarError):
    def __init__(self, line_no, expected=None, got=None):
        super().__init__(f"line {line_no}: expected {expected} fields, got {got}")
        self.line_no = line_no


class InvalidCalibration(PseudoLidarError):
    pass


class NotPng(PseudoLidarError):
    pass


class WrongBitDepth(PseudoLidarError):
    pass


class WrongChannelCount(PseudoLidarError):
    pass


class TruncatedFile(PseudoLidarError):
    pass


# --- geometry ----------------------------------------------------------------

class NonPositiveDepth(PseudoLidarError):
    pass


class DegeneratePolygon(PseudoLidarError):
    pass


class FrameMismatch(PseudoLidarError):
    pass


class SingularTransform(PseudoLidarError):
    pass


# --- cloud construction ------------------------------------------------------

class RasterSizeMismatch(PseudoLidarError):
    pass


class MissingFeatureRaster(PseudoLidarError):
    pass


class EmptyCloud(PseudoLidarError):
    pass


class LengthMismatch(PseudoLidarError):
    pass


# --- fitter / metrics --------------------------------------------------------

class NoSamplesForClass(PseudoLidarError):
    def __init__(self, class_name):
        super().__init__(f"no labels for class {class_name!r}")
        self.class_name = class_name


class UnknownClass(PseudoLidarError):
    def __init__(self, class_name):
        super().__init__(f"no size prior for class {class_name!r}")
        self.class_name = class_name


class NoGroundTruth(PseudoLidarError):
    pass

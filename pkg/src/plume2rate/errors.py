"""Exception hierarchy shared across the package."""


class PlumeRateError(Exception):
    """Base class for all package-specific errors."""


# raster / grid operations

class GapFillRequired(PlumeRateError):
    """Operation needs a complete field but the input has invalid cells."""


class UnsupportedUpscale(PlumeRateError):
    """Requested target resolution is coarser than the source."""


class EmptyField(PlumeRateError):
    """Field has no valid cells to work from."""


class PatchOutOfBounds(PlumeRateError):
    """Requested patch window crosses the field boundary."""


# scene simulation

class SourceOutOfBounds(PlumeRateError):
    """Emission source lies outside the simulation grid."""


class InvalidCoverage(PlumeRateError):
    """Sounding coverage fraction outside (0, 1]."""


# ingest / preprocessing

class InsufficientSoundings(PlumeRateError):
    """Fewer valid sounding cells than the regression needs."""


class GridMismatch(PlumeRateError):
    """Co-registered fields differ in shape, cell size, or origin."""


class DegenerateProxy(PlumeRateError):
    """Proxy series sums to zero; daily weights undefined."""


class InvalidProxy(PlumeRateError):
    """Proxy value negative or non-finite."""


# dataset assembly

class EmptyDataset(PlumeRateError):
    """No samples where at least one is required."""


class InvalidAugment(PlumeRateError):
    """Augmentation parameters outside the supported range."""


class UnbinnedSample(PlumeRateError):
    """Sample target falls outside every emission bin."""


class SchemaError(PlumeRateError):
    """Sample does not match the 4x64x64 feature schema."""


# models

class ConfigError(PlumeRateError):
    """Model or run configuration is invalid."""


class InvalidInput(PlumeRateError):
    """Model input contains non-finite values."""


# training / evaluation

class ZeroTargetMAPE(PlumeRateError):
    """MAPE undefined for a zero target."""


class LengthError(PlumeRateError):
    """Prediction/target vectors have mismatched or insufficient length."""


class TrainingDiverged(PlumeRateError):
    """Training loss became non-finite."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class EmptyEnsemble(PlumeRateError):
    """Ensemble has no members."""


class InvalidTarget(PlumeRateError):
    """Evaluation target is zero or negative."""


class DegenerateR2(PlumeRateError):
    """R^2 undefined for constant targets."""


class ZeroBaseline(PlumeRateError):
    """Relative improvement undefined for a zero baseline."""


class IoError(PlumeRateError):
    """Artifact could not be written or read."""

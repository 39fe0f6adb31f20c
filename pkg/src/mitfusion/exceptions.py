"""Exception types raised across the package."""


class ShapeError(ValueError):
    """An array does not have the shape a layer or operation expects."""


class FormatError(ValueError):
    """A file on disk does not follow the expected binary or text layout."""


class ManifestError(ValueError):
    """A dataset manifest or class list failed validation."""


class MissingModalityError(KeyError):
    """A record lacks a modality that a consumer asked for."""

    def __str__(self):
        # KeyError repr-quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch

"""Exception hierarchy shared by every layer of the package."""


class MxError(Exception):
    """Base class for all errors raised by mxsf."""


class NonFiniteInput(MxError, ValueError):
    """NaN or infinity handed to a codec or quantizer."""


class ExponentAboveShared(MxError, ValueError):
    """An element's exponent exceeds the block's shared exponent."""


class ExponentOutOfRange(MxError, ValueError):
    """Shared exponent does not fit the signed 8-bit storage range."""


class MalformedCode(MxError, ValueError):
    """Element code does not fit its format's bit width."""


class NotReusable(MxError):
    """A 1D-tiled tensor cannot be reused transposed."""


class BlockShapeMismatch(MxError, ValueError):
    pass


class DimMismatch(MxError, ValueError):
    pass


class TileIncompatible(MxError, ValueError):
    pass


class StoreError(MxError):
    """Base class for file-format errors."""


class IoError(StoreError, OSError):
    pass


class CorruptHeader(StoreError):
    pass


class TruncatedPayload(StoreError):
    pass


class BadMagic(StoreError):
    pass


class UnknownFormatId(StoreError):
    pass


class CorruptBlock(StoreError):
    pass

"""Exception hierarchy shared across the package."""


class CellsplatError(Exception):
    """Base class for every error raised by cellsplat."""


class FormatError(CellsplatError):
    """A file on disk does not match the layout we expect."""


class MissingFileError(FormatError, FileNotFoundError):
    pass


class MalformedRecordError(FormatError):
    pass


class UnsupportedCameraModelError(FormatError):
    """Raised for any COLMAP camera model other than PINHOLE / SIMPLE_PINHOLE."""


class PlySchemaError(FormatError):
    """A Gaussian PLY lacks a required attribute or its payload is short."""


class ManifestError(FormatError):
    pass


class DegenerateGeometryError(CellsplatError):
    pass


class EmptyCellError(CellsplatError):
    pass


class InvertedBoxError(DegenerateGeometryError):
    """All points of a cell lie at or below the ground plane."""


class PartitionError(CellsplatError):
    pass


class OverlappingCellsError(CellsplatError):
    pass


class ShapeMismatchError(CellsplatError, ValueError):
    pass


class TrainerNotFoundError(CellsplatError):
    pass

"""Exception types shared across the package.

The CLI maps these onto exit codes: format errors exit with 2, data
consistency errors with 3.
"""


class GeoEnsembleError(Exception):
    """Base class for all package errors."""


class RasterFormatError(GeoEnsembleError, ValueError):
    """Malformed GRV1 raster or CSV input."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DimensionError(GeoEnsembleError, ValueError):
    """Grid shapes that cannot be combined."""


class DataError(GeoEnsembleError, ValueError):
    """Inputs are individually well-formed but mutually inconsistent."""


class CellConflictError(DataError):
    def __init__(self, row, col, first_id, second_id):
        self.row, self.col = row, col
        self.first_id, self.second_id = first_id, second_id
        super().__init__(
            f"pixel ({row}, {col}) claimed by cell {first_id} and cell {second_id}"
        )


class ZeroAreaError(DataError):
    def __init__(self, class_id):
        self.class_id = class_id
        super().__init__(f"class {class_id} has a positive score but zero area")


class BalanceError(DataError):
    def __init__(self, empty_buckets):
        self.empty_buckets = list(empty_buckets)
        super().__init__(f"no images in bucket(s) {self.empty_buckets}")


class NoPredictionError(DataError):
    """The evaluated map is zero everywhere."""


class JoinError(DataError):
    """Record sets that should describe the same images do not."""


class ResourceError(GeoEnsembleError, MemoryError):
    """An operation would exceed its memory or size guard."""

"""Exception hierarchy shared by all pimann modules."""


class PimannError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(PimannError, ValueError):
    """A call violated an operation precondition (bad count, shape, range)."""


class InvalidData(PimannError, ValueError):
    """Input data is unusable (non-finite values, wrong dtype semantics)."""


class FormatError(PimannError, ValueError):
    """A file did not parse; message carries the byte offset or record index."""


class ConfigError(PimannError, ValueError):
    """A run configuration is malformed or references missing files."""


class InfeasiblePlacement(PimannError, RuntimeError):
    """No placement satisfies the capacity/replication constraints."""


class MissingReplica(PimannError, LookupError):
    """A scheduled cluster has no replica in the placement map."""


class CacheOverflow(PimannError, RuntimeError):
    """A combination set needs more slots than the cache capacity allows."""


class CorruptEncoding(PimannError, RuntimeError):
    """A re-encoded vector addresses outside its extended lookup table."""


class InvalidTransfer(PimannError, ValueError):
    """An MRAM transfer size violates the min/max/alignment rules."""


class WramOverflow(PimannError, RuntimeError):
    """A stage's WRAM allocations exceed the scratchpad capacity."""

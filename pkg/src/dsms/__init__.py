"""Dynamic size message scheduling for bandwidth-limited multi-agent communication."""
from .errors import DSMSError

__version__ = "0.1.0"

__all__ = ["DSMSError", "__version__"]

"""Allow ``python -m spikedepth`` as an alias for the console script."""
from .cli import entry

entry()

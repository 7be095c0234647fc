"""Monte Carlo engine for the tokenized sovereign debt conversion mechanism."""
import logging

__version__ = "1.0.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

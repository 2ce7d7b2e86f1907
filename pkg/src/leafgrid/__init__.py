"""Learning radial distribution grid topology and impedances from leaf measurements."""

__version__ = "0.1.0"

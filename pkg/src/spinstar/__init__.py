"""spinstar: compile, pulse and verify circuits for star-topology spin registers."""

__version__ = "0.1.0"

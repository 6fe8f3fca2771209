"""Point-cloud single-object tracking under high temporal variation."""

__version__ = "0.1.0"

"""Request-count instruments for survey nonresponse."""

__version__ = "0.1.0"

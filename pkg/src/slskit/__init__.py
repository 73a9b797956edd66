"""slskit: structured closed-loop controller synthesis for LTI networks."""

__version__ = "0.1.0"

"""upseg: low-resolution-input segmentation with high-resolution supervision.

Keep this module import-light: the CLI has to set thread-cap environment
variables before numpy is loaded, so nothing heavy may be imported here.
"""

__version__ = "0.1.0"

"""Multi-source NMT with pseudo-translation augmentation for incomplete corpora."""

__version__ = "0.1.0"

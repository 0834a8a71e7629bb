"""Path-signature and classical time-series features with sparse linear forecasters.

The package turns multichannel recordings into windowed feature matrices
(truncated path signatures, moments, auto/cross-correlations, interpolated
amplitude spectra), trains L1- and cardinality-constrained logistic models
to separate pre-event from baseline windows, and evaluates them under a
strictly time-ordered split protocol.  A seeded synthetic generator provides
ground-truth data for end-to-end validation.
"""

__version__ = "0.1.0"

"""Receptive fields of convolutional-network units by reverse correlation.

Modules:
    stimulus    white noise, grating battery, natural-image ingestion
    netforward  forward-only conv inference, center probe, synthetic units
    revcorr     streaming AWA / AWC accumulation and sub-filter selection
    eigen       cyclic Jacobi symmetric eigensolver
    lnmodel     linear-nonlinear cascade fitting and scoring
    tuning      orientation/SF maps, one-way ANOVA, response histograms
    cli         ``cnnrf`` command line
"""

__version__ = "0.1.0"

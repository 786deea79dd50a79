"""Automatic masker selection for soundscape augmentation.

Modules
-------
perception  ISO 12913-3 indices and questionnaire scale normalization
acoustics   weighted levels, LAF series, exceedance, loudness
maskers     masker bank, calibration tables, speaker-distance chain
predictor   ISOPL prediction backends and candidate ranking
engine      the per-interval selection loop and session logs
simulator   rendering augmented audio and AMB/AMSS reports
analysis    KS, BH/Holm, Kendall tau-b, survey contrasts
service     HTTP prediction service
cli         ``amss`` command line
"""

__version__ = "0.1.0"

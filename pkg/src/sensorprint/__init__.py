"""Motion-sensor device fingerprinting toolkit.

Pipeline: raw accelerometer/gyroscope captures -> resampled streams ->
per-stream temporal and spectral features -> learned Mahalanobis metric ->
classification, distance-distribution modelling, large-population accuracy
simulation, and privacy countermeasures.
"""

__version__ = "0.1.0"

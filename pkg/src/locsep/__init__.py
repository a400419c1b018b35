"""Location-based vs permutation-invariant training for multi-channel speaker separation.

Modules: ``signals`` (STFT, cIRM, WAV I/O), ``acoustics`` (scenes, image-method
RIRs), ``criteria`` (PIT and location-based assignment), ``localization``
(mask-weighted GCC-PHAT), ``model`` (toy Dense-UNet and training), ``metrics``
(SI-SNR, SDR, ESTOI), ``harness`` (CLI) and ``estimator`` (fit/predict API).
"""

__version__ = "0.1.0"

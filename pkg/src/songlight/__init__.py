"""songlight: attention-based music highlight extraction.

The package is organized bottom-up:

- :mod:`songlight.dsp` -- WAV decoding, log-mel chunks, spectral curves.
- :mod:`songlight.nn` -- minimal numpy tensors, tape-based autodiff, layers.
- :mod:`songlight.models` -- attention architectures and model file I/O.
- :mod:`songlight.training` -- synthetic data, mini-batch trainer, timers.
- :mod:`songlight.extraction` -- highlight selection from curves.
- :mod:`songlight.evaluation` -- chorus-overlap scoring and reports.
- :mod:`songlight.cli` -- the ``songlight`` command.
"""

__version__ = "0.1.0"

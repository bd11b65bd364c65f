"""EEG cognitive-engagement classification with a from-scratch numpy CNN.

Submodules: ``data`` (recordings, trials, labels, splits), ``dsp``
(filtering, resampling, trial preprocessing), ``ica`` (ocular artifact
removal), ``nn``/``model`` (layers and the network), ``training``
(Adam training, both validation protocols), ``sliding`` (windowed
engagement trajectories), ``synth`` (synthetic subjects and sessions),
``stream`` (binary stream protocol), ``report`` and ``cli``.
"""

__version__ = "0.1.0"

"""EEG auditory attention decoding with a joint CNN-LSTM classifier.

Subpackages and modules:

- :mod:`aadnet.dsp` - filtering, resampling, segmentation, spectrograms
- :mod:`aadnet.autodiff` - tensors with reverse-mode gradients, layers, Adam
- :mod:`aadnet.model` - the EEG/audio convolution stacks, BLSTM and classifier head
- :mod:`aadnet.training` - training loop, evaluation, ablations
- :mod:`aadnet.splits` - leak-free train/validation/test assignment
- :mod:`aadnet.sparsify` - magnitude pruning and sparse checkpoints
- :mod:`aadnet.synth` - synthetic TRF-driven EEG for end-to-end checks
- :mod:`aadnet.container` - binary trial container and manifest
- :mod:`aadnet.stats` - Wilcoxon signed-rank test
"""

from .model import AADNet, AblationMode, ModelConfig, param_count

__version__ = "0.1.0"

__all__ = ["AADNet", "AblationMode", "ModelConfig", "param_count", "__version__"]

"""Progressive multi-scale residual network (PMRN) for single image
super-resolution, implemented as a self-contained CPU numerical engine.

Subpackages and modules:

- ``pmrn.autodiff``: rank-4 tensors, numpy compute kernels, tape-based
  reverse-mode differentiation, and finite-difference gradient checking.
- ``pmrn.nn``: convolution layers, the named parameter store, weight
  initialization, and the on-disk weight format.
- ``pmrn.arch``: the PMRN architecture (combination stacks, CPA attention,
  residual blocks, model assembly, self-ensemble inference).
- ``pmrn.analyzer``: symbolic parameter / MACs / receptive-field accounting.
- ``pmrn.data`` and ``pmrn.metrics``: image I/O, bicubic resampling,
  degradation pipelines, patch sampling, PSNR/SSIM.
- ``pmrn.trainer``: L1 training loop with Adam and checkpointing.
- ``pmrn.cli``: the ``pmrn`` command-line tool.
"""

__version__ = "0.1.0"

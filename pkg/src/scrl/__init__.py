"""Two-stage self-supervised clip representation learning and retrieval.

Importing this package before numpy lets SCRL_THREADS cap the BLAS worker
count (default 1, for bit-reproducible runs).
"""

import os as _os

_threads = _os.environ.get("SCRL_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

from .tensor import Tensor, no_grad  # noqa: E402,F401

__version__ = "0.1.0"

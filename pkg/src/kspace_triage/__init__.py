"""Disease classification directly from under-sampled multi-coil k-space.

The package bundles a from-scratch FFT and reverse-mode autodiff engine, a
spectral-convolution classifier, random-mask training, Monte-Carlo sampling
mask search, a synthetic phantom generator and evaluation tooling.
"""

import os as _os

# Cap BLAS/OpenMP pools before numpy loads them.
_threads = _os.environ.get("KSPACE_TRIAGE_THREADS", "").strip()
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import (ConfigError, ContractError, FormatError, NumericalAbort,  # noqa: E402
                     ShapeError, UndefinedMetricError)
from .sampling import MaskPrior, SamplingMask, apply_mask, center_mask, draw_mask  # noqa: E402
from .spectral import center_shift, dft2  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "FormatError", "NumericalAbort", "ShapeError", "UndefinedMetricError",
    "MaskPrior", "SamplingMask", "apply_mask", "center_mask", "draw_mask", "center_shift", "dft2",
    "__version__",
]

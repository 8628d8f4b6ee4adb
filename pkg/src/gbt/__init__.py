"""Few-view novel view synthesis with ray-distance-biased transformers."""
import os as _os

# GBT_THREADS caps BLAS worker threads; must be set before numpy loads.
_threads = _os.environ.get("GBT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

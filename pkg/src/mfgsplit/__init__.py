"""Primal-dual splitting for non-potential mean-field games."""

import os as _os

# MFG_THREADS caps the BLAS / OpenMP pools; it only takes effect if set
# before numpy is first imported.
_threads = _os.environ.get("MFG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

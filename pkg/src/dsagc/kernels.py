"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``DSAGC_KERNELS=python`` to force the fallback.

The Chebyshev recurrence always runs on numpy: its batched matmuls go
through BLAS and beat the compiled loops (see benchmarks/bench_kernels.py).
"""
import logging
import os

from dsagc import _pykernels

logger = logging.getLogger(__name__)

if os.environ.get("DSAGC_KERNELS", "").lower() == "python":
    from dsagc import _pykernels as impl
else:
    try:
        from dsagc import _ckernels as impl
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")
        from dsagc import _pykernels as impl

BACKEND = impl.BACKEND
adjacency_forward = impl.adjacency_forward
adjacency_backward = impl.adjacency_backward
power_iteration = impl.power_iteration
cheb_forward = _pykernels.cheb_forward
cheb_backward = _pykernels.cheb_backward
tsne_gradient = impl.tsne_gradient

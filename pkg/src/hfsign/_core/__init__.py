"""Hot kernels, compiled when available.

The Cython module ``_kernels`` is built by ``setup.py``; when it is missing
(source checkout without a build, or ``HFSIGN_PURE_PYTHON=1``) the numpy
versions in ``_kernels_py`` are used instead.  ``BACKEND`` names the one in use.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("HFSIGN_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def im2col(x, k, stride, pad, ho, wo):
    if _compiled is not None and x.dtype in (np.float32, np.float64):
        return _compiled.im2col(np.ascontiguousarray(x), k, stride, pad, ho, wo)
    return _kernels_py.im2col(x, k, stride, pad, ho, wo)


def col2im(cols, n_img, n_ch, h, w, k, stride, pad, ho, wo):
    if _compiled is not None and cols.dtype in (np.float32, np.float64):
        return _compiled.col2im(np.ascontiguousarray(cols), n_img, n_ch, h, w, k, stride, pad, ho, wo)
    return _kernels_py.col2im(cols, n_img, n_ch, h, w, k, stride, pad, ho, wo)


def overlap_add(frames, hop, length):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    if _compiled is not None:
        return _compiled.overlap_add(frames, hop, length)
    return _kernels_py.overlap_add(frames, hop, length)

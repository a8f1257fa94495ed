"""Kernel backend selection.

The density/partials kernels sit inside the sampler's gradient loop, so a
compiled extension is used when available.  Set COPSSM_PURE=1 to force the
NumPy implementation.  The h-function kernels are vectorized NumPy either
way; they run outside the hot loop.
"""

import os

import numpy as np

from . import pure
from .pure import (
    CODE_CLAYTON,
    CODE_FRANK,
    CODE_GAUSSIAN,
    CODE_GUMBEL,
    CODE_INDEPENDENCE,
    CODE_STUDENT_T,
    hfun,
    hinv,
    t_quantile,
)


def _adapt(compiled_fn, pure_fn, n_out):
    """Route scalar-theta calls to the compiled 1-d kernel."""

    def dispatch(code, theta, df, u, v, xs=None, ys=None):
        if np.ndim(theta) != 0:
            return pure_fn(code, theta, df, u, v, xs, ys)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        arrs = [u, v]
        if xs is not None:
            arrs.append(np.asarray(xs, dtype=float))
        if ys is not None:
            arrs.append(np.asarray(ys, dtype=float))
        arrs = np.broadcast_arrays(*arrs)
        shape = arrs[0].shape
        flat = [np.ascontiguousarray(a, dtype=float).ravel() for a in arrs]
        x1 = flat[2] if xs is not None else None
        y1 = flat[-1] if ys is not None else None
        out = compiled_fn(int(code), float(theta), float(df or 0), flat[0], flat[1], x1, y1)
        if n_out == 1:
            return out.reshape(shape)
        return tuple(part.reshape(shape) for part in out)

    return dispatch


_force_pure = os.environ.get("COPSSM_PURE", "") not in ("", "0")

if _force_pure:
    BACKEND = "pure"
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        BACKEND = "pure"

if BACKEND == "compiled":
    logpdf = _adapt(_kernels.logpdf, pure.logpdf, 1)
    logpdf_partials = _adapt(_kernels.logpdf_partials, pure.logpdf_partials, 4)
else:
    logpdf = pure.logpdf
    logpdf_partials = pure.logpdf_partials

__all__ = [
    "BACKEND",
    "CODE_CLAYTON",
    "CODE_FRANK",
    "CODE_GAUSSIAN",
    "CODE_GUMBEL",
    "CODE_INDEPENDENCE",
    "CODE_STUDENT_T",
    "hfun",
    "hinv",
    "logpdf",
    "logpdf_partials",
    "pure",
    "t_quantile",
]

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], point: Mapping[str, np.ndarray],
               eps: float = 1e-6) -> float:
    """Worst relative disagreement between tape gradients and central differences.

    ``f`` maps a dict of named tensors to a scalar tensor. The error for a
    coordinate is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    tape = Tape()
    out = f({k: tape.param(v, k) for k, v in base.items()})
    analytic = tape.backward(out)

    def probe(values):
        val = float(np.asarray(f({k: Tensor(v) for k, v in values.items()}).data))
        if not np.isfinite(val):
            raise FloatingPointError("f is non-finite at a probe point")
        return val

    worst = 0.0
    for name, value in base.items():
        for idx in np.ndindex(value.shape):
            shifted = dict(base)
            arr = value.copy()
            arr[idx] = value[idx] + eps
            shifted[name] = arr
            up = probe(shifted)
            arr = value.copy()
            arr[idx] = value[idx] - eps
            shifted[name] = arr
            down = probe(shifted)
            numeric = (up - down) / (2 * eps)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst

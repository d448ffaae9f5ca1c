"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

FD_STEP = 1e-4
REL_TOL = 1e-3
GRAD_FLOOR = 1e-6  # entries with |analytic| below this are skipped


def sweep(loss_fn, arr, analytic, h=FD_STEP, floor=GRAD_FLOOR):
    """Worst relative error between central differences on ``arr`` and the
    ``analytic`` gradient, over entries where |analytic| > floor."""
    worst = 0.0
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        an = float(analytic[idx])
        if abs(an) <= floor:
            continue
        old = arr[idx]
        arr[idx] = old + h
        lp = loss_fn()
        arr[idx] = old - h
        lm = loss_fn()
        arr[idx] = old
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    return worst

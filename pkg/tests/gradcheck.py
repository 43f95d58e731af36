"""Central finite-difference oracle, independent of the autodiff graph."""
import numpy as np

H = 1e-5
REL_TOL = 1e-4
FLOOR = 1e-5


def numeric_grad(f, arr, h=H):
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=FLOOR):
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))

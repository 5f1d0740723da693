from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict
    n_checked: int

    def passed(self, tolerance):
        return self.max_rel_error <= tolerance


def grad_check(fn, inputs, h=1e-5, max_entries=None, rng=None):
    """Compare reverse-mode gradients with central finite differences.

    ``fn()`` evaluates the graph on the arrays in ``inputs`` (a name -> array
    dict, perturbed in place) and returns ``(scalar, grads)`` with ``grads``
    keyed like ``inputs``.  Arrays must be float64.  With ``max_entries``,
    only that many randomly chosen entries per tensor are perturbed.

    Relative error per tensor is the largest ``|g_a - g_n|`` over the
    checked entries divided by the largest ``|g_a|`` anywhere in that tensor,
    so exactly-zero entries (dead units, zero key bits) are judged against
    the tensor's gradient scale rather than their own.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, analytic = fn()
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    per_tensor = {}
    n_checked = 0
    for name, arr in inputs.items():
        if arr.dtype != np.float64:
            raise TypeError(f"{name}: grad_check needs float64 arrays, got {arr.dtype}")
        flat = arr.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = fn()[0]
            flat[i] = old - h
            fm = fn()[0]
            flat[i] = old
            numeric[j] = (fp - fm) / (2 * h)
        full = analytic[name].reshape(-1)
        err = float(np.max(np.abs(full[idx] - numeric)))
        scale = max(float(np.max(np.abs(full))), float(np.max(np.abs(numeric))))
        per_tensor[name] = 0.0 if scale == 0 else err / scale
        n_checked += len(idx)
    return GradCheckReport(max(per_tensor.values(), default=0.0), per_tensor, n_checked)

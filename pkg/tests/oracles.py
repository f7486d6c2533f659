"""Independent oracles the tests check the library against.

Each is deliberately written against first principles (loops, direct
polynomial evaluation, central differences) rather than reusing any code
path under test.
"""

from __future__ import annotations

import numpy as np

FD_STEP_SCALE = 1e-4
# mixed tolerance: relative error for healthy gradients, absolute for the
# handful of parameters whose true gradient is ~0 (e.g. conv biases that a
# train-mode BN absorbs exactly)
FD_DENOM_FLOOR = 1e-6


def fd_gradient(loss_fn, arr: np.ndarray) -> np.ndarray:
    """Central finite differences of loss_fn w.r.t. every element of arr.

    Step is FD_STEP_SCALE * max(1, |theta|); arr is restored exactly.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        h = FD_STEP_SCALE * max(1.0, abs(float(orig)))
        arr[idx] = orig + h
        loss_plus = loss_fn()
        arr[idx] = orig - h
        loss_minus = loss_fn()
        arr[idx] = orig
        grad[idx] = (loss_plus - loss_minus) / (2.0 * h)
    return grad


def fd_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FD_DENOM_FLOOR)
    return float((np.abs(analytic - numeric) / denom).max())


def sos_gain(sections: np.ndarray, freq_hz: float, sample_rate_hz: float) -> float:
    """|H(e^{j 2 pi f / fs})| of a biquad cascade by direct polynomial evaluation."""
    z = np.exp(-2j * np.pi * freq_hz / sample_rate_hz)  # z^{-1}
    h = 1.0 + 0.0j
    for b0, b1, b2, a1, a2 in np.asarray(sections, dtype=np.float64):
        h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    return abs(h)


def best_lag(reference: np.ndarray, shifted: np.ndarray, max_lag: int) -> int:
    """Brute-force cross-correlation lag search over [-max_lag, max_lag]."""
    n = len(reference)
    best, best_score = 0, -np.inf
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            a, b = reference[lag:], shifted[: n - lag]
        else:
            a, b = reference[: n + lag], shifted[-lag:]
        score = float(np.dot(a, b))
        if score > best_score:
            best, best_score = lag, score
    return best


# --- metrics by direct pairwise counting (no confusion matrix) --------------

def pairwise_accuracy(y_true, y_pred) -> float:
    hits = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    return hits / len(y_true)


def pairwise_f1(y_true, y_pred, cls: int) -> float:
    tp = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p == cls)
    fp = sum(1 for t, p in zip(y_true, y_pred) if t != cls and p == cls)
    fn = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p != cls)
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def pairwise_macro_f1(y_true, y_pred, n_classes: int = 5) -> float:
    return sum(pairwise_f1(y_true, y_pred, c) for c in range(n_classes)) / n_classes


def pairwise_kappa(y_true, y_pred, n_classes: int = 5) -> float:
    n = len(y_true)
    p_o = pairwise_accuracy(y_true, y_pred)
    p_e = 0.0
    for c in range(n_classes):
        row = sum(1 for t in y_true if t == c)
        col = sum(1 for p in y_pred if p == c)
        p_e += row * col / (n * n)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)

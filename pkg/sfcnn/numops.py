"""
Numerical kernel of the network.

Every operation works on float64 arrays whose two trailing axes are
 (indicator row, time). Multi-map convolutions take inputs shaped
 (batch, K_in, d, L) and filter tensors shaped (K_out, K_in, d, m); the
 single-sequence and single-bank helpers are thin views over the same code.

Convolution convention: output j (0-based) is `sum_n f[n] * s[j - n]` with
 zero padding outside [0, L), i.e. the "full" convolution of length L + m - 1.
"""
import typing as ty
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from sfcnn.errors import NonFiniteError, NothingComparedError, ShapeMismatchError

DTYPE = np.float64


@dataclass
class FilterBank:
    """d filters of length m (one per indicator row) plus d biases."""

    filters: np.ndarray
    biases: np.ndarray

    def __post_init__(self) -> None:
        self.filters = np.asarray(self.filters, dtype=DTYPE)
        self.biases = np.asarray(self.biases, dtype=DTYPE)
        if self.filters.ndim != 2 or self.filters.shape[1] < 1:
            raise ShapeMismatchError(
                f"Filter bank must be d x m with m >= 1, got {self.filters.shape}"
            )
        if self.biases.shape != (self.filters.shape[0],):
            raise ShapeMismatchError(
                f"Expected {self.filters.shape[0]} biases, got {self.biases.shape}"
            )

    @property
    def d(self) -> int:
        return self.filters.shape[0]

    @property
    def m(self) -> int:
        return self.filters.shape[1]


def _conv_windows(x: np.ndarray, m: int) -> np.ndarray:
    """Zero-pad the time axis by m-1 on both sides and return length-m windows."""
    pad = [(0, 0)] * (x.ndim - 1) + [(m - 1, m - 1)]
    return sliding_window_view(np.pad(x, pad), m, axis=-1)


def conv_maps(x: np.ndarray, filters: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """
    Sum of depthwise wide convolutions over input maps.

    out[b, j, r, t] = sum_k conv(x[b, k, r], filters[j, k, r])[t] + sum_k biases[j, k, r]

    :param x: (B, K_in, d, L)
    :param filters: (K_out, K_in, d, m)
    :param biases: (K_out, K_in, d)
    :return: (B, K_out, d, L + m - 1)
    """
    batch, k_in, d, length = x.shape
    k_out, f_in, f_d, m = filters.shape
    if (f_in, f_d) != (k_in, d) or biases.shape != (k_out, k_in, d):
        raise ShapeMismatchError(
            f"Input {x.shape} does not match filters {filters.shape} / biases {biases.shape}"
        )
    out_len = length + m - 1

    # (B, K_in, d, out_len, m) -> (d, B * out_len, K_in * m)
    windows = _conv_windows(x, m)
    cols = windows.transpose(2, 0, 3, 1, 4).reshape(d, batch * out_len, k_in * m)
    # Reversed filters turn the sliding dot product into a convolution
    kernel = filters[..., ::-1].transpose(2, 1, 3, 0).reshape(d, k_in * m, k_out)

    out = np.matmul(cols, kernel)  # (d, B * out_len, K_out)
    out = out.reshape(d, batch, out_len, k_out).transpose(1, 3, 0, 2)
    return out + biases.sum(axis=1)[None, :, :, None]


def conv_maps_backward(
    x: np.ndarray, filters: np.ndarray, upstream: np.ndarray
) -> ty.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of `sum(upstream * conv_maps(x, filters, biases))`.

    :return: (grad_x, grad_filters, grad_biases) shaped like x, filters and biases
    """
    batch, k_in, d, length = x.shape
    k_out, _, _, m = filters.shape
    out_len = length + m - 1
    if upstream.shape != (batch, k_out, d, out_len):
        raise ShapeMismatchError(
            f"Upstream gradient {upstream.shape} != {(batch, k_out, d, out_len)}"
        )

    windows = _conv_windows(x, m)
    cols = windows.transpose(2, 0, 3, 1, 4).reshape(d, batch * out_len, k_in * m)
    kernel = filters[..., ::-1].transpose(2, 1, 3, 0).reshape(d, k_in * m, k_out)
    grad_out = upstream.transpose(2, 0, 3, 1).reshape(d, batch * out_len, k_out)

    grad_kernel = np.matmul(cols.transpose(0, 2, 1), grad_out)  # (d, K_in * m, K_out)
    grad_filters = grad_kernel.reshape(d, k_in, m, k_out).transpose(3, 1, 0, 2)
    grad_filters = np.ascontiguousarray(grad_filters[..., ::-1])

    grad_bias_row = upstream.sum(axis=(0, 3))  # (K_out, d)
    grad_biases = np.repeat(grad_bias_row[:, None, :], k_in, axis=1)

    # Fold window gradients back onto the padded sequence
    grad_cols = np.matmul(grad_out, kernel.transpose(0, 2, 1))  # (d, B * out_len, K_in * m)
    grad_windows = grad_cols.reshape(d, batch, out_len, k_in, m).transpose(1, 3, 0, 2, 4)
    grad_padded = np.zeros((batch, k_in, d, length + 2 * (m - 1)), dtype=DTYPE)
    for i in range(m):
        grad_padded[..., i : i + out_len] += grad_windows[..., i]
    grad_x = grad_padded[..., m - 1 : m - 1 + length]

    return grad_x, grad_filters, grad_biases


def wide_conv_row(s: ty.Sequence[float], f: ty.Sequence[float], b: float = 0.0) -> np.ndarray:
    """Wide convolution of one sequence with one filter plus a bias (length L + m - 1)."""
    s = np.asarray(s, dtype=DTYPE)
    f = np.asarray(f, dtype=DTYPE)
    if s.ndim != 1 or f.ndim != 1 or s.size < 1 or f.size < 1:
        raise ShapeMismatchError(
            f"Expected non-empty 1-D sequence and filter, got {s.shape} and {f.shape}"
        )
    out = conv_maps(
        s[None, None, None, :],
        f[None, None, None, :],
        np.full((1, 1, 1), b, dtype=DTYPE),
    )
    return out[0, 0, 0]


def conv_bank(S: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Row-wise wide convolution of a d x L matrix with a d x m filter bank."""
    S = _as_matrix(S)
    if S.shape[0] != bank.d:
        raise ShapeMismatchError(f"Input has {S.shape[0]} rows, bank has {bank.d}")
    out = conv_maps(S[None, None], bank.filters[None, None], bank.biases[None, None])
    return out[0, 0]


def conv_bank_backward(
    S: np.ndarray, bank: FilterBank, upstream: np.ndarray
) -> ty.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_S d x L, grad_filters d x m, grad_biases d)."""
    S = _as_matrix(S)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if S.shape[0] != bank.d:
        raise ShapeMismatchError(f"Input has {S.shape[0]} rows, bank has {bank.d}")
    if upstream.shape != (bank.d, S.shape[1] + bank.m - 1):
        raise ShapeMismatchError(
            f"Upstream gradient {upstream.shape} != {(bank.d, S.shape[1] + bank.m - 1)}"
        )
    grad_x, grad_filters, grad_biases = conv_maps_backward(
        S[None, None], bank.filters[None, None], upstream[None, None]
    )
    return grad_x[0, 0], grad_filters[0, 0], grad_biases[0, 0]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # Subgradient at exactly 0 is 0
    return np.where(x > 0, upstream, 0.0)


def pooled_length(length: int, pool: int) -> int:
    return -(-length // pool)


def _pool_windows(a: np.ndarray, pool: int) -> np.ndarray:
    """Reshape the time axis into ceil(L / pool) windows, padding the tail with -inf."""
    if pool < 1:
        raise ShapeMismatchError(f"Pool length must be >= 1, got {pool}")
    length = a.shape[-1]
    n_windows = pooled_length(length, pool)
    missing = n_windows * pool - length
    if missing:
        pad = [(0, 0)] * (a.ndim - 1) + [(0, missing)]
        a = np.pad(a, pad, constant_values=-np.inf)
    return a.reshape(a.shape[:-1] + (n_windows, pool))


def maxpool_rows(a: np.ndarray, pool: int) -> np.ndarray:
    """Row-wise max over consecutive windows of `pool` entries; the last one may be partial."""
    return _pool_windows(np.asarray(a, dtype=DTYPE), pool).max(axis=-1)


def maxpool_argmax(a: np.ndarray, pool: int) -> np.ndarray:
    """Index of the maximum inside every pooling window (first index on ties)."""
    return _pool_windows(np.asarray(a, dtype=DTYPE), pool).argmax(axis=-1)


def maxpool_backward(a: np.ndarray, pool: int, upstream: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    windows = _pool_windows(a, pool)
    if upstream.shape != windows.shape[:-1]:
        raise ShapeMismatchError(
            f"Upstream gradient {upstream.shape} != pooled shape {windows.shape[:-1]}"
        )
    index = windows.argmax(axis=-1)
    grad = np.zeros_like(windows)
    np.put_along_axis(grad, index[..., None], upstream[..., None], axis=-1)
    grad = grad.reshape(a.shape[:-1] + (-1,))
    return grad[..., : a.shape[-1]]


def finite_diff_check(
    f: ty.Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-6,
    is_comparable: ty.Optional[ty.Callable[[np.ndarray, np.ndarray], bool]] = None,
    floor: float = 1e-12,
) -> float:
    """
    Compare an analytic gradient with central differences.

    :param f: scalar function of a flat parameter vector
    :param point: where to evaluate the gradient
    :param analytic: analytic gradient at `point`, same size as `point`
    :param h: perturbation step
    :param is_comparable: optional predicate on (x + h e_i, x - h e_i); entries for
        which it returns False are skipped (used to step over activation kinks).
    :param floor: lower bound of the denominator; gradients below it are compared
        in absolute terms
    :return: max over entries of |a - n| / max(floor, |a| + |n|)
    :raises NothingComparedError: when `is_comparable` rejects every entry
    """
    if h <= 0:
        raise ValueError(f"Step must be positive, got {h=}")
    point = np.asarray(point, dtype=DTYPE).ravel()
    analytic = np.asarray(analytic, dtype=DTYPE).ravel()
    if analytic.shape != point.shape:
        raise ShapeMismatchError(f"Gradient {analytic.shape} != point {point.shape}")

    max_error = 0.0
    compared = 0
    for i in range(point.size):
        plus = point.copy()
        plus[i] += h
        minus = point.copy()
        minus[i] -= h
        if is_comparable is not None and not is_comparable(plus, minus):
            continue
        f_plus, f_minus = f(plus), f(minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"Function is not finite around entry {i}")
        numeric = (f_plus - f_minus) / (2 * h)
        error = abs(analytic[i] - numeric) / max(floor, abs(analytic[i]) + abs(numeric))
        max_error = max(max_error, error)
        compared += 1
    if compared == 0 and point.size > 0:
        raise NothingComparedError(f"All {point.size} entries were skipped at {h=}")
    return max_error


def _as_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or min(x.shape) < 1:
        raise ShapeMismatchError(f"Expected a non-empty d x L matrix, got {x.shape}")
    return x

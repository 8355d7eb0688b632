"""
Full-model finite-difference gradient check.

The network is piecewise linear in every single parameter (convolutions, the
 dense matrix and the head are linear, ReLU and max-pooling only switch between
 linear pieces), so central differences are exact up to rounding as long as
 x - h, x and x + h share one activation pattern. Entries whose perturbation
 flips a ReLU sign or a pooling arg-max are skipped. A tensor with no comparable
 entry at any step fails the check.
"""
import logging
import typing as ty

import numpy as np

from sfcnn.errors import NothingComparedError
from sfcnn.model.architecture import Architecture
from sfcnn.model.network import ModelParams, backward, dropout_mask, forward_batch, init_params
from sfcnn.numops import finite_diff_check

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
TOLERANCE = 1e-6
BATCH_SIZE = 2
# Gradients smaller than this are compared in absolute terms
GRADIENT_FLOOR = 1e-4
# Step divisions by 10 tried when a tensor has no comparable entry
FALLBACK_STEPS = 3


def tiny_architecture() -> Architecture:
    return Architecture(
        num_slots=4, d=2, T=10, filter_sizes=[3], pool_sizes=[2], maps=[2], dense_dim=3, dropout_rate=0.2
    )


def random_tiny_architecture(rng: np.random.Generator) -> Architecture:
    """Random architecture with at most 3 orders, d <= 4, T <= 16 and K_i <= 3."""
    orders = int(rng.integers(1, 4))
    return Architecture(
        num_slots=int(rng.integers(1, 5)),
        d=int(rng.integers(1, 5)),
        T=int(rng.integers(4, 17)),
        filter_sizes=[int(it) for it in rng.integers(1, 5, size=orders)],
        pool_sizes=[int(it) for it in rng.integers(1, 4, size=orders)],
        maps=[int(it) for it in rng.integers(1, 4, size=orders)],
        dense_dim=int(rng.integers(1, 5)),
        dropout_rate=float(rng.choice([0.0, 0.2, 0.5])),
    )


def _randomized_params(arch: Architecture, rng: np.random.Generator) -> ModelParams:
    """Glorot init plus non-zero biases and head, so no tensor has a trivial gradient."""
    params = init_params(arch, int(rng.integers(2**31)))
    for name in params.names():
        if name.endswith(".biases") or name == "head":
            params = params.replace(name, rng.uniform(-0.5, 0.5, size=params[name].shape))
    return params


def gradient_check(
    arch: Architecture,
    seed: int,
    h: float = DEFAULT_STEP,
    flip_sign: bool = False,
) -> ty.Dict[str, float]:
    """
    Max relative error between analytic and central-difference gradients, per tensor.

    The checked function is `sum_b upstream[b] * prediction[b]` on a random batch
     with a fixed dropout mask.

    :param flip_sign: negate the analytic head gradient (harness self-test)
    """
    rng = np.random.default_rng(seed)
    params = _randomized_params(arch, rng)
    x = rng.normal(size=(BATCH_SIZE, arch.num_slots, arch.d, arch.T))
    upstream = rng.normal(size=BATCH_SIZE)
    mask = dropout_mask(rng, (BATCH_SIZE, arch.flatten_size), arch.dropout_rate)

    def run(p: ModelParams):
        return forward_batch(x, p, mode="train", mask=mask)

    _, trace = run(params)
    grads = backward(trace, params, upstream)
    if flip_sign:
        grads = grads.replace("head", -grads["head"])

    base_pattern = trace.pattern()
    report = {}
    for name in params.names():
        shape = params[name].shape

        def with_tensor(flat: np.ndarray) -> ModelParams:
            return params.replace(name, flat.reshape(shape))

        def objective(flat: np.ndarray) -> float:
            predictions, _ = run(with_tensor(flat))
            return float(upstream @ predictions)

        def same_pattern(plus: np.ndarray, minus: np.ndarray) -> bool:
            return (
                run(with_tensor(plus))[1].pattern() == base_pattern
                and run(with_tensor(minus))[1].pattern() == base_pattern
            )

        report[name] = _check_tensor(objective, params[name], grads[name], h, same_pattern)
        logger.debug(f"{name}: max relative error {report[name]:.3e}")
    return report


def _check_tensor(
    objective: ty.Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic: np.ndarray,
    h: float,
    same_pattern: ty.Callable[[np.ndarray, np.ndarray], bool],
) -> float:
    """Shrinks the step while every entry's perturbation crosses a kink."""
    for attempt in range(FALLBACK_STEPS + 1):
        step = h / 10**attempt
        try:
            return finite_diff_check(
                objective, point, analytic, h=step, is_comparable=same_pattern, floor=GRADIENT_FLOOR
            )
        except NothingComparedError:
            if attempt == FALLBACK_STEPS:
                raise
            logger.debug(f"No comparable entry at h={step:g}, retrying with a smaller step")


def passed(report: ty.Dict[str, float], tolerance: float = TOLERANCE) -> bool:
    return all(error < tolerance for error in report.values())

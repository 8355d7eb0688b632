"""
Weighted-MSE training with Adamax and the pretrain / fine-tune transfer schedule.
"""
import enum
import logging
import typing as ty
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import Field

from sfcnn.base import BaseModel
from sfcnn.errors import (
    DataError,
    InsufficientHistoryError,
    NoSamplesError,
    NonFiniteGradientError,
    ShapeMismatchError,
)
from sfcnn.ingest import Sample, stack_frames
from sfcnn.model.architecture import Architecture
from sfcnn.model.network import ModelParams, backward, forward_batch, init_params

logger = logging.getLogger(__name__)

ALL_REGIONS = "all"


class Variant(enum.Enum):
    CNN_WD_TL = "cnn_wd_tl"
    CNN_WD = "cnn_wd"
    CNN = "cnn"
    SINGLE_CNN = "single_cnn"

    def __str__(self) -> str:
        return self.value


class TrainConfig(BaseModel):
    # fmt: off
    batch_size: int = Field(default=128, ge=1, description="Mini-batch size.")
    pretrain_epochs: int = Field(default=10, ge=0, description="Epochs on the pooled sample set.")
    finetune_epochs: int = Field(default=10, ge=0, description="Epochs on each region's sample set.")
    beta: float = Field(default=0.02, ge=0, description="Sample weight decay rate.")
    alpha: float = Field(default=0.002, ge=0, description="Adamax step size.")
    beta1: float = Field(default=0.9, ge=0, lt=1, description="Adamax first-moment decay.")
    beta2: float = Field(default=0.999, ge=0, le=1, description="Adamax infinity-norm decay.")
    eps: float = Field(default=1e-8, gt=0, description="Adamax denominator offset.")
    seed: int = Field(default=0, ge=0, description="Seed for init, shuffling and dropout.")
    variant: Variant = Field(default=Variant.CNN_WD_TL, description="Experimental setting.")
    # fmt: on

    @property
    def effective_beta(self) -> float:
        """Decay rate actually used to weight samples under `variant`."""
        if self.variant in (Variant.CNN, Variant.SINGLE_CNN):
            return 0.0
        return self.beta

    @property
    def transfer(self) -> bool:
        """Whether per-region models start from a pooled pretrained model."""
        return self.variant == Variant.CNN_WD_TL

    @property
    def shared_model(self) -> bool:
        return self.variant == Variant.SINGLE_CNN


@dataclass
class AdamaxState:
    m: ty.Dict[str, np.ndarray]
    u: ty.Dict[str, np.ndarray]
    t: int = 0
    alpha: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, config: ty.Optional[TrainConfig] = None) -> "AdamaxState":
        config = config or TrainConfig()
        return cls(
            m={name: np.zeros_like(t) for name, t in params.tensors.items()},
            u={name: np.zeros_like(t) for name, t in params.tensors.items()},
            alpha=config.alpha,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
        )


@dataclass
class RegionModel:
    params: ModelParams
    history: ty.List[float] = field(default_factory=list)


@dataclass
class RegionModelSet:
    """One model per region plus the pooled pretrained model they started from."""

    arch: Architecture
    pretrained: ModelParams
    pretrain_history: ty.List[float] = field(default_factory=list)
    models: ty.Dict[str, RegionModel] = field(default_factory=dict)
    failed: ty.Dict[str, str] = field(default_factory=dict)

    def params_for(self, region_id: str) -> ModelParams:
        return self.models[region_id].params

    def history_dict(self) -> dict:
        return {
            "pretrain": list(self.pretrain_history),
            "finetune": {region: list(model.history) for region, model in self.models.items()},
            "failed": dict(self.failed),
        }


def weighted_mse(predictions: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> float:
    """Sum of weight_i * (y_i - y_hat_i)^2."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not predictions.shape == targets.shape == weights.shape or predictions.ndim != 1:
        raise ShapeMismatchError(
            f"Lengths differ: {predictions.shape}, {targets.shape}, {weights.shape}"
        )
    if predictions.size == 0:
        raise NoSamplesError("Loss of an empty batch")
    return float(np.sum(weights * (targets - predictions) ** 2))


def mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    return weighted_mse(predictions, targets, np.ones_like(predictions)) / predictions.size


def adamax_step(
    params: ModelParams, grads: ModelParams, state: AdamaxState
) -> ty.Tuple[ModelParams, AdamaxState]:
    for name, grad in grads.tensors.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    t = state.t + 1
    step = state.alpha / (1 - state.beta1**t)
    tensors, m_next, u_next = {}, {}, {}
    for name, value in params.tensors.items():
        grad = grads[name]
        m_next[name] = state.beta1 * state.m[name] + (1 - state.beta1) * grad
        u_next[name] = np.maximum(state.beta2 * state.u[name], np.abs(grad))
        tensors[name] = value - step * m_next[name] / (u_next[name] + state.eps)

    next_state = AdamaxState(
        m=m_next,
        u=u_next,
        t=t,
        alpha=state.alpha,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    return ModelParams(arch=params.arch, tensors=tensors), next_state


def _targets(samples: ty.Sequence[Sample]) -> np.ndarray:
    if any(sample.target is None for sample in samples):
        raise InsufficientHistoryError("Training sample without a target window")
    return np.array([sample.target for sample in samples], dtype=np.float64)


def train_epoch(
    samples: ty.Sequence[Sample],
    params: ModelParams,
    state: AdamaxState,
    batch_size: int,
    rng: np.random.Generator,
    dropout_rng: ty.Optional[np.random.Generator] = None,
) -> ty.Tuple[ModelParams, AdamaxState, float]:
    """
    One shuffled pass over `samples`.

    :param rng: shuffling generator
    :param dropout_rng: dropout generator, `rng` when omitted
    :return: updated params and state plus the epoch's weighted squared error
        computed from the pre-update predictions of every batch
    """
    if len(samples) == 0:
        raise NoSamplesError("Can not train on an empty sample set")
    if batch_size < 1:
        raise ValueError(f"Batch size must be >= 1, got {batch_size=}")
    dropout_rng = rng if dropout_rng is None else dropout_rng

    order = rng.permutation(len(samples))
    epoch_loss = 0.0
    for start in range(0, len(order), batch_size):
        batch = [samples[i] for i in order[start : start + batch_size]]
        x = stack_frames(batch)
        targets = _targets(batch)
        weights = np.array([sample.weight for sample in batch], dtype=np.float64)

        predictions, trace = forward_batch(x, params, mode="train", rng=dropout_rng)
        epoch_loss += weighted_mse(predictions, targets, weights)
        grads = backward(trace, params, 2.0 * weights * (predictions - targets))
        params, state = adamax_step(params, grads, state)
    return params, state, epoch_loss


def _run_phase(
    samples: ty.Sequence[Sample],
    params: ModelParams,
    config: TrainConfig,
    epochs: int,
    shuffle_seed: np.random.SeedSequence,
    dropout_seed: np.random.SeedSequence,
    on_epoch: ty.Optional[ty.Callable[[int, float], None]] = None,
) -> ty.Tuple[ModelParams, ty.List[float]]:
    """Train `epochs` epochs from a fresh optimizer state."""
    rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    state = AdamaxState.fresh(params, config)
    history = []
    for epoch in range(1, epochs + 1):
        params, state, loss = train_epoch(
            samples, params, state, config.batch_size, rng, dropout_rng
        )
        history.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, loss)
    return params, history


def _progress_line(phase: str, region: str, epoch: int, loss: float) -> str:
    return f"phase={phase} region={region} epoch={epoch} loss={loss!r}"


def transfer_train(
    pooled_samples: ty.Sequence[Sample],
    per_region_samples: ty.Mapping[str, ty.Sequence[Sample]],
    arch: Architecture,
    config: TrainConfig,
    progress_logger: ty.Optional[logging.Logger] = None,
    threads: int = 1,
) -> RegionModelSet:
    """
    Pretrain on the pooled samples, then fine-tune a copy per region.

    Variants without transfer train every region from the initial parameters;
     `single_cnn` trains the pooled model for both phases' epochs and shares it.
     Regions without samples or whose training fails on data are reported in
     `failed`; the remaining regions proceed. Progress lines of the per-region
     phase are emitted after all regions finish, in sorted region order.
    """
    progress = progress_logger or logger
    pretrain_shuffle, pretrain_dropout, finetune_shuffle, finetune_dropout = (
        np.random.SeedSequence(config.seed).spawn(4)
    )
    initial = init_params(arch, config.seed)
    result = RegionModelSet(arch=arch, pretrained=initial)

    if config.transfer or config.shared_model:
        if len(pooled_samples) == 0:
            raise NoSamplesError("No pooled training samples")
        epochs = config.pretrain_epochs
        if config.shared_model:
            epochs += config.finetune_epochs
        result.pretrained, result.pretrain_history = _run_phase(
            pooled_samples,
            initial,
            config,
            epochs,
            pretrain_shuffle,
            pretrain_dropout,
            on_epoch=lambda epoch, loss: progress.info(
                _progress_line("pretrain", ALL_REGIONS, epoch, loss)
            ),
        )

    regions = sorted(per_region_samples)
    if config.shared_model:
        for region in regions:
            result.models[region] = RegionModel(params=result.pretrained)
        return result

    def finetune(region: str) -> ty.Tuple[ModelParams, ty.List[float], ty.List[float]]:
        samples = per_region_samples[region]
        if len(samples) == 0:
            raise NoSamplesError(f"Region {region} has no training samples")
        params, own_pretrain = result.pretrained, []
        if not config.transfer:
            params, own_pretrain = _run_phase(
                samples, initial, config, config.pretrain_epochs, pretrain_shuffle, pretrain_dropout
            )
        params, history = _run_phase(
            samples, params, config, config.finetune_epochs, finetune_shuffle, finetune_dropout
        )
        return params, own_pretrain, history

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {region: pool.submit(finetune, region) for region in regions}

    for region in regions:
        try:
            params, own_pretrain, history = futures[region].result()
        except DataError as exc:
            logger.warning(f"Region {region} failed: {exc}")
            result.failed[region] = str(exc)
            continue
        for epoch, loss in enumerate(own_pretrain, start=1):
            progress.info(_progress_line("pretrain", region, epoch, loss))
        for epoch, loss in enumerate(history, start=1):
            progress.info(_progress_line("finetune", region, epoch, loss))
        result.models[region] = RegionModel(params=params, history=history)
    return result


def predict(params: ModelParams, samples: ty.Sequence[Sample], batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions for `samples`, in order."""
    outputs = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size]
        outputs.append(forward_batch(stack_frames(batch), params, mode="eval")[0])
    return np.concatenate(outputs) if outputs else np.zeros(0)


@dataclass
class EvaluationResult:
    regions: ty.Dict[str, float]
    average: float

    def to_dict(self) -> dict:
        return {"regions": dict(self.regions), "average": self.average}


def average_of(regions: ty.Mapping[str, float]) -> float:
    if not regions:
        raise NoSamplesError("No region to average over")
    return float(np.mean([regions[region] for region in sorted(regions)]))


def evaluate(
    models: ty.Union[RegionModelSet, ty.Mapping[str, ModelParams]],
    test_samples: ty.Mapping[str, ty.Sequence[Sample]],
    batch_size: int = 256,
) -> EvaluationResult:
    """Per-region mean squared error and its unweighted mean across regions."""
    if isinstance(models, RegionModelSet):
        models = {region: model.params for region, model in models.models.items()}
    regions = {}
    for region in sorted(test_samples):
        samples = test_samples[region]
        if len(samples) == 0:
            raise NoSamplesError(f"Region {region} has no test samples")
        if region not in models:
            logger.warning(f"No model for region {region}, skipping it")
            continue
        predictions = predict(models[region], samples, batch_size)
        regions[region] = mse(predictions, _targets(samples))
    return EvaluationResult(regions=regions, average=average_of(regions))

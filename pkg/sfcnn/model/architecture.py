import typing as ty

from pydantic import Field, model_validator

from sfcnn.base import BaseModel
from sfcnn.errors import ShapeChainError
from sfcnn.numops import pooled_length


class Architecture(BaseModel):
    """Network hyperparameters; every tensor shape is derived from these alone."""

    # fmt: off
    num_slots: int = Field(default=4, description="Indicator matrices per Data Frame (K_0).")
    d: int = Field(description="Indicators per matrix row count.")
    T: int = Field(description="Data Frame length in days.")
    filter_sizes: ty.List[int] = Field(default=[7, 4, 3], description="Filter length m_i per order.")
    pool_sizes: ty.List[int] = Field(default=[7, 4, 3], description="Max-pooling length per order.")
    maps: ty.List[int] = Field(default=[8, 8, 8], description="Feature maps K_i per order.")
    dense_dim: int = Field(default=64, description="Size n of the extracted feature vector.")
    dropout_rate: float = Field(default=0.2, description="Dropout rate on the flattened vector.")
    activation: ty.Literal["relu"] = Field(default="relu", description="Activation used everywhere.")
    # fmt: on

    @model_validator(mode="after")
    def validate_shape_chain(self) -> "Architecture":
        orders = {len(self.filter_sizes), len(self.pool_sizes), len(self.maps)}
        if len(orders) != 1 or 0 in orders:
            raise ShapeChainError(
                "filter_sizes, pool_sizes and maps must share one non-zero length, got"
                f" {self.filter_sizes}, {self.pool_sizes}, {self.maps}"
            )
        scalars = {"num_slots": self.num_slots, "d": self.d, "T": self.T, "dense_dim": self.dense_dim}
        for name, value in scalars.items():
            if value < 1:
                raise ShapeChainError(f"{name} must be >= 1, got {value}")
        for name in ("filter_sizes", "pool_sizes", "maps"):
            if any(value < 1 for value in getattr(self, name)):
                raise ShapeChainError(f"All {name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.dropout_rate < 1:
            raise ShapeChainError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        return self

    @property
    def orders(self) -> int:
        return len(self.maps)

    def stage_lengths(self) -> ty.List[int]:
        """[T, conv_1, pool_1, conv_2, pool_2, ...] time lengths through the network."""
        lengths = [self.T]
        length = self.T
        for m, pool in zip(self.filter_sizes, self.pool_sizes):
            length = length + m - 1
            lengths.append(length)
            length = pooled_length(length, pool)
            lengths.append(length)
        return lengths

    def order_lengths(self) -> ty.List[int]:
        """[L_0, L_1, ..., L_h] with L_i = ceil((L_{i-1} + m_i - 1) / pool_i)."""
        return self.stage_lengths()[::2]

    @property
    def flatten_size(self) -> int:
        return self.maps[-1] * self.d * self.order_lengths()[-1]

    def input_maps(self, order: int) -> int:
        """K_{i-1} for 1-based `order`."""
        return self.num_slots if order == 1 else self.maps[order - 2]

    def tensor_shapes(self) -> ty.Dict[str, ty.Tuple[int, ...]]:
        """Name -> shape for every learnable tensor, in serialization order."""
        shapes = {}
        for order in range(1, self.orders + 1):
            k_out, k_in = self.maps[order - 1], self.input_maps(order)
            m = self.filter_sizes[order - 1]
            shapes[f"conv{order}.filters"] = (k_out, k_in, self.d, m)
            shapes[f"conv{order}.biases"] = (k_out, k_in, self.d)
        shapes["dense"] = (self.flatten_size, self.dense_dim)
        shapes["head"] = (self.dense_dim + 1,)
        return shapes

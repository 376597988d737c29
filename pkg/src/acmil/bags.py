"""The multiple-instance sample unit: a bag of feature vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError


@dataclass
class Bag:
    """One labelled bag: an (N, D) instance matrix plus a class index.

    instance_labels are diagnostic only (0 = background, >= 1 identifies a
    discriminative pattern); they never enter training.
    """

    id: str
    instances: np.ndarray
    label: int
    instance_labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise DataFormatError(f"bag {self.id!r}: instances must be a non-empty 2-d matrix")
        if not np.all(np.isfinite(self.instances)):
            raise DataFormatError(f"bag {self.id!r}: non-finite feature values")
        if self.label < 0:
            raise DataFormatError(f"bag {self.id!r}: negative label")
        if self.instance_labels is not None:
            self.instance_labels = np.asarray(self.instance_labels, dtype=np.int64)
            if self.instance_labels.shape != (self.instances.shape[0],):
                raise DataFormatError(
                    f"bag {self.id!r}: instance_labels length must equal the instance count"
                )

    @property
    def n_instances(self) -> int:
        return self.instances.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.instances.shape[1]

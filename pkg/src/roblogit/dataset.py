from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (n x p) with a binary response ``y``.

    When ``intercept`` is true a column of ones is appended to the design used
    for fitting, so the coefficient vector has ``p + 1`` entries with the
    intercept last.  ``truth`` optionally carries simulation ground truth
    (``beta0`` and friends); it is ignored by the estimators.
    """

    X: np.ndarray
    y: np.ndarray
    intercept: bool = False
    truth: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ContractError(f"X must be 2-dimensional, got shape {X.shape}")
        if X.shape[0] < 1:
            raise ContractError("dataset needs at least one row")
        if y.shape[0] != X.shape[0]:
            raise ContractError(f"y has {y.shape[0]} entries but X has {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise ContractError("X contains non-finite entries")
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("y must be binary (0/1)")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_coef(self):
        return self.p + int(self.intercept)

    @property
    def design(self):
        """Design matrix used by the estimators (with the intercept column if any)."""
        d = self.__dict__.get("_design")
        if d is None:
            if self.intercept:
                d = np.ascontiguousarray(np.column_stack([self.X, np.ones(self.n)]))
                d.setflags(write=False)
            else:
                d = self.X
            object.__setattr__(self, "_design", d)
        return d

    def subset_columns(self, cols):
        cols = np.asarray(cols, dtype=int)
        return Dataset(self.X[:, cols], self.y, intercept=self.intercept, truth=self.truth)

"""Data model for structured input-output multi-task regression.

The central estimation problem is

    min_B  1/2 ||Y - B X||_F^2
           + lambda1 * ||B||_1
           + lambda2 * sum_k sum_{g in G} ||beta_k^g||_2
           + lambda3 * sum_j sum_{h in H} ||beta_h^j||_2

where X (J x N) holds one input variable per row, Y (K x N) holds one
output trait per row, and B (K x J) is the coefficient matrix.  G groups
columns of B (input variables), H groups rows of B (output traits);
groups may overlap.  beta_k^g is the restriction of row k to the columns
in g, beta_h^j the restriction of column j to the rows in h.

All rows of X and Y are standardized to zero mean and unit L2 norm, so
that x_j . x_j^T = 1.  The model carries no intercept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InputError, SolverError

_CONST_ROW_TOL = 1e-12


def soft_threshold(value, threshold):
    """Shrink `value` toward zero by `threshold`, clamping at zero."""
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def _standardize_rows_stats(m):
    """Center rows and scale to unit L2 norm.

    Returns (standardized matrix, row means, row norms, constant-row mask).
    Constant rows are centered and left at zero norm; their recorded norm
    is 1 so that inverse transforms are well defined.
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise InputError("matrix contains non-finite entries")
    means = m.mean(axis=1)
    centered = m - means[:, None]
    norms = np.linalg.norm(centered, axis=1)
    constant = norms <= _CONST_ROW_TOL * (1.0 + np.abs(means))
    safe = np.where(constant, 1.0, norms)
    out = centered / safe[:, None]
    out[constant] = 0.0
    return out, means, safe, constant


def standardize_rows(m):
    """Return `m` with every row centered and scaled to unit L2 norm.

    Zero-variance rows cannot be scaled; they are centered, left at zero,
    and reported through a RuntimeWarning.
    """
    out, _, _, constant = _standardize_rows_stats(m)
    if constant.any():
        warnings.warn(
            "constant rows left at zero norm: %s" % np.flatnonzero(constant).tolist(),
            RuntimeWarning,
            stacklevel=2,
        )
    return out


@dataclass
class Dataset:
    """Sample-aligned input matrix X (J x N) and response matrix Y (K x N).

    Built through `from_raw`, which standardizes every row to zero mean and
    unit L2 norm and keeps the raw matrices plus the per-row statistics so
    held-out samples can be mapped onto the same scale.
    """

    X: np.ndarray
    Y: np.ndarray
    sample_ids: list | None = None
    input_ids: list | None = None
    output_ids: list | None = None
    raw_X: np.ndarray | None = None
    raw_Y: np.ndarray | None = None
    x_means: np.ndarray | None = None
    x_norms: np.ndarray | None = None
    y_means: np.ndarray | None = None
    y_norms: np.ndarray | None = None
    constant_inputs: np.ndarray | None = None
    constant_outputs: np.ndarray | None = None
    # expanded-design bookkeeping: entry j is ("marginal", j0) or ("pair", r, s)
    column_map: list | None = None
    pair_columns: np.ndarray | None = None
    standardized: bool = True

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise InputError("X and Y must be 2-D matrices")
        if self.X.shape[1] != self.Y.shape[1]:
            raise InputError(
                "X and Y disagree on sample count: %d vs %d"
                % (self.X.shape[1], self.Y.shape[1])
            )

    @classmethod
    def from_raw(cls, X, Y, sample_ids=None, input_ids=None, output_ids=None):
        """Standardize raw matrices row-wise and keep the raw copies."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        xs, xm, xn, xc = _standardize_rows_stats(X)
        ys, ym, yn, yc = _standardize_rows_stats(Y)
        if xc.any() or yc.any():
            warnings.warn(
                "constant rows excluded from the model (inputs %s, outputs %s)"
                % (np.flatnonzero(xc).tolist(), np.flatnonzero(yc).tolist()),
                RuntimeWarning,
                stacklevel=2,
            )
        return cls(
            X=xs, Y=ys,
            sample_ids=list(sample_ids) if sample_ids is not None else None,
            input_ids=list(input_ids) if input_ids is not None else None,
            output_ids=list(output_ids) if output_ids is not None else None,
            raw_X=X.copy(), raw_Y=Y.copy(),
            x_means=xm, x_norms=xn, y_means=ym, y_norms=yn,
            constant_inputs=xc, constant_outputs=yc,
        )

    @property
    def n_inputs(self):
        return self.X.shape[0]

    @property
    def n_outputs(self):
        return self.Y.shape[0]

    @property
    def n_samples(self):
        return self.X.shape[1]

    def transform_inputs(self, X_raw):
        """Map new raw input samples onto this dataset's standardized scale."""
        if self.x_means is None:
            raise InputError("dataset carries no standardization statistics")
        X_raw = np.asarray(X_raw, dtype=np.float64)
        out = (X_raw - self.x_means[:, None]) / self.x_norms[:, None]
        if self.constant_inputs is not None:
            out[self.constant_inputs] = 0.0
        return out

    def transform_outputs(self, Y_raw):
        """Map new raw responses onto this dataset's standardized scale."""
        if self.y_means is None:
            raise InputError("dataset carries no standardization statistics")
        Y_raw = np.asarray(Y_raw, dtype=np.float64)
        out = (Y_raw - self.y_means[:, None]) / self.y_norms[:, None]
        if self.constant_outputs is not None:
            out[self.constant_outputs] = 0.0
        return out

    def validate_standardized(self, tol=1e-10):
        """Check the row mean / unit norm invariant (constant rows excepted)."""
        for m, const in ((self.X, self.constant_inputs), (self.Y, self.constant_outputs)):
            keep = np.ones(m.shape[0], dtype=bool) if const is None else ~const
            if np.abs(m[keep].mean(axis=1)).max(initial=0.0) > tol:
                raise InputError("row means exceed tolerance")
            norms = np.linalg.norm(m[keep], axis=1)
            if norms.size and np.abs(norms - 1.0).max() > tol:
                raise InputError("row norms exceed tolerance")


def holdout_like(train, X_raw, Y_raw):
    """Build a validation dataset aligned with a training dataset.

    Inputs are mapped onto the training standardization so fitted
    coefficients apply directly; responses are kept on the raw scale for
    prediction-error reporting.
    """
    return Dataset(
        X=train.transform_inputs(X_raw),
        Y=np.asarray(Y_raw, dtype=np.float64),
        raw_X=np.asarray(X_raw, dtype=np.float64),
        raw_Y=np.asarray(Y_raw, dtype=np.float64),
        input_ids=train.input_ids,
        output_ids=train.output_ids,
        standardized=False,
    )


class GroupStructure:
    """Possibly-overlapping input (column) and output (row) groups.

    Groups are stored as sorted tuples of 0-based indices.  Empty groups
    and duplicated index sets are rejected; overlap is allowed.
    """

    def __init__(self, input_groups, output_groups):
        self.input_groups = self._normalize(input_groups, "input")
        self.output_groups = self._normalize(output_groups, "output")

    @staticmethod
    def _normalize(groups, side):
        seen = set()
        out = []
        for g in groups:
            idx = tuple(sorted(int(i) for i in g))
            if not idx:
                raise InputError("empty %s group" % side)
            if any(i < 0 for i in idx):
                raise InputError("negative index in %s group %s" % (side, idx))
            if len(set(idx)) != len(idx):
                raise InputError("repeated index within %s group %s" % (side, idx))
            if idx in seen:
                raise InputError("duplicate %s group %s" % (side, idx))
            seen.add(idx)
            out.append(idx)
        return out

    def validate(self, n_inputs, n_outputs):
        for g in self.input_groups:
            if g[-1] >= n_inputs:
                raise InputError("input group index %d out of range (J=%d)" % (g[-1], n_inputs))
        for h in self.output_groups:
            if h[-1] >= n_outputs:
                raise InputError("output group index %d out of range (K=%d)" % (h[-1], n_outputs))

    def with_singletons(self, n_inputs, n_outputs):
        """Wrap every ungrouped variable in a singleton group.

        The model penalizes exactly the listed groups, so indices outside
        any group must become groups of their own to take part at all.
        """
        self.validate(n_inputs, n_outputs)
        covered_in = set(i for g in self.input_groups for i in g)
        covered_out = set(i for h in self.output_groups for i in h)
        gs = list(self.input_groups) + [(j,) for j in range(n_inputs) if j not in covered_in]
        hs = list(self.output_groups) + [(k,) for k in range(n_outputs) if k not in covered_out]
        return GroupStructure(gs, hs)

    def __eq__(self, other):
        return (
            isinstance(other, GroupStructure)
            and self.input_groups == other.input_groups
            and self.output_groups == other.output_groups
        )

    def __repr__(self):
        return "GroupStructure(%d input groups, %d output groups)" % (
            len(self.input_groups),
            len(self.output_groups),
        )


@dataclass
class PenaltyConfig:
    """Penalty weights: lambda1 entrywise, lambda2 input groups, lambda3
    output groups, lambda4 entrywise on interaction (pair) columns."""

    lambda1: float
    lambda2: float = 0.0
    lambda3: float = 0.0
    lambda4: float | None = None

    def __post_init__(self):
        if self.lambda4 is None:
            self.lambda4 = self.lambda1
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise InputError("%s must be finite and >= 0, got %r" % (name, v))
            setattr(self, name, v)

    def l1_weights(self, n_inputs, pair_columns=None):
        """Per-column L1 weight: lambda1, or lambda4 on pair columns."""
        w = np.full(n_inputs, self.lambda1)
        if pair_columns is not None:
            w[np.asarray(pair_columns, dtype=bool)] = self.lambda4
        return w


@dataclass
class CoefMatrix:
    """K x J coefficient estimate with an explicit support set.

    Entries outside the support are exactly 0.0; the support is derived
    once at construction and `validate` re-checks the correspondence.
    """

    values: np.ndarray
    support: frozenset = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InputError("coefficient matrix must be 2-D")
        if self.support is None:
            k, j = np.nonzero(self.values)
            self.support = frozenset(zip(k.tolist(), j.tolist()))

    @classmethod
    def zeros(cls, n_outputs, n_inputs):
        return cls(np.zeros((n_outputs, n_inputs)))

    @property
    def nnz(self):
        return len(self.support)

    def validate(self):
        k, j = np.nonzero(self.values)
        actual = frozenset(zip(k.tolist(), j.tolist()))
        if actual != self.support:
            raise InputError("support set does not match nonzero entries")


class ResidualState:
    """Residual matrix R = Y - B X maintained incrementally.

    Single-coefficient updates touch one row of R; `resync` recomputes R
    from scratch to cap floating-point drift.
    """

    def __init__(self, R):
        self.R = np.asarray(R, dtype=np.float64)

    @classmethod
    def from_fit(cls, ds, B):
        values = B.values if isinstance(B, CoefMatrix) else np.asarray(B)
        return cls(ds.Y - values @ ds.X)

    def apply_coefficient_change(self, k, delta, x_j):
        """Account for beta_k^j increasing by `delta`."""
        self.R[k] -= delta * x_j

    def resync(self, ds, B):
        values = B.values if isinstance(B, CoefMatrix) else np.asarray(B)
        self.R = ds.Y - values @ ds.X

    def drift(self, ds, B):
        values = B.values if isinstance(B, CoefMatrix) else np.asarray(B)
        exact = ds.Y - values @ ds.X
        return np.linalg.norm(self.R - exact)


def partial_residual(rs, B, k, j, x_j):
    """r_k^j = y_k - sum_{l != j} beta_k^l x_l, computed as row k of R plus beta_k^j x_j."""
    values = B.values if isinstance(B, CoefMatrix) else np.asarray(B)
    return rs.R[k] + values[k, j] * x_j


def objective_value(ds, B, gs, pc):
    """Evaluate the penalized least-squares objective at B.

    The penalty runs over exactly the groups listed in `gs`; callers that
    want ungrouped variables penalized must pass a singleton-completed
    structure (the solver does this internally).
    """
    values = B.values if isinstance(B, CoefMatrix) else np.asarray(B, dtype=np.float64)
    if values.shape != (ds.n_outputs, ds.n_inputs):
        raise InputError(
            "coefficient shape %s does not match data (K=%d, J=%d)"
            % (values.shape, ds.n_outputs, ds.n_inputs)
        )
    gs.validate(ds.n_inputs, ds.n_outputs)
    resid = ds.Y - values @ ds.X
    total = 0.5 * float(np.sum(resid * resid))
    w1 = pc.l1_weights(ds.n_inputs, ds.pair_columns)
    total += float(np.sum(np.abs(values) * w1[None, :]))
    if pc.lambda2 > 0:
        for g in gs.input_groups:
            total += pc.lambda2 * float(np.linalg.norm(values[:, g], axis=1).sum())
    if pc.lambda3 > 0:
        for h in gs.output_groups:
            total += pc.lambda3 * float(np.linalg.norm(values[h, :], axis=0).sum())
    return total


def ridge_init(ds, ridge_lambda=1.0):
    """Dense ridge-regression start: each row solves
    min 1/2 ||y_k - b X||^2 + (ridge_lambda/2) ||b||^2."""
    if not ridge_lambda > 0:
        raise InputError("ridge_lambda must be > 0")
    J = ds.n_inputs
    gram = ds.X @ ds.X.T + ridge_lambda * np.eye(J)
    try:
        factor = cho_factor(gram)
        B = cho_solve(factor, ds.X @ ds.Y.T).T
    except np.linalg.LinAlgError as exc:  # pragma: no cover - gram is SPD
        raise SolverError("ridge system could not be factorized") from exc
    if not np.all(np.isfinite(B)):
        raise SolverError("ridge solution contains non-finite values")
    return CoefMatrix(B)

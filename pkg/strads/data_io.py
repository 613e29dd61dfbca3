#!/usr/bin/env python
# coding=utf-8

# Copyright 2026 The STRADS contributors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import csv
from dataclasses import dataclass
from logging import getLogger
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .core import StandardizedMatrix, standardize, standardize_vector
from .trace import TRACE_COLUMNS, TraceRecord
from .utils import DataFormatError, StradsConfigError, StradsIOError


__all__ = [
    "LassoDataset",
    "SparseRatings",
    "load_lasso_csv",
    "load_ratings_mtx",
    "write_ratings_mtx",
    "write_lasso_csv",
    "gen_synthetic_lasso",
    "gen_synthetic_ratings",
    "write_trace",
    "read_trace",
]


logger = getLogger(__name__)


@dataclass
class LassoDataset:
    """Standardized design matrix and unit-norm, zero-mean response."""

    X: StandardizedMatrix
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.shape != (self.X.n_samples,):
            raise DataFormatError(f"length mismatch: y={self.y.shape[0]}, X rows={self.X.n_samples}")
        if abs(self.y.mean()) > 1e-9 or abs(np.linalg.norm(self.y) - 1.0) > 1e-9:
            raise DataFormatError("y is not standardized")
        self.y.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return self.X.n_samples

    @property
    def n_features(self) -> int:
        return self.X.n_features


class SparseRatings:
    """
    Observed entries of an N x M ratings matrix with row and column views.

    Entries are stored once, as parallel `rows`, `cols` and `values` arrays. `row_view` is an N x M CSR
    matrix whose stored values are the 1-based positions of the entries in those arrays; `col_view` is
    its M x N transpose, also CSR. Kernels slice the views to gather the entries of a set of rows or
    columns without copying the matrix.

    Args:
        n_rows (`int`): Number of rows N (users).
        n_cols (`int`): Number of columns M (items).
        rows, cols (`np.ndarray`): 0-based coordinates of the observed entries.
        values (`np.ndarray`): Observed values.
    """

    def __init__(self, n_rows: int, n_cols: int, rows, cols, values):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.values.shape) or self.rows.ndim != 1:
            raise DataFormatError("rows, cols and values must be 1-D arrays of equal length")
        if self.n_rows < 1 or self.n_cols < 1:
            raise DataFormatError("ratings matrix needs at least one row and one column")
        if self.nnz and (self.rows.min() < 0 or self.rows.max() >= self.n_rows):
            raise DataFormatError("row index out of range")
        if self.nnz and (self.cols.min() < 0 or self.cols.max() >= self.n_cols):
            raise DataFormatError("column index out of range")
        positions = sp.coo_matrix(
            (np.arange(1, self.nnz + 1, dtype=np.int64), (self.rows, self.cols)), shape=(self.n_rows, self.n_cols)
        )
        # duplicates are summed by the conversion, so they show up as a smaller nnz
        self.row_view = positions.tocsr()
        self.col_view = positions.T.tocsr()
        if self.row_view.nnz != self.nnz:
            raise DataFormatError("duplicate entry")
        self.row_view.sort_indices()
        self.col_view.sort_indices()
        for arr in (self.rows, self.cols, self.values):
            arr.flags.writeable = False

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def row_positions(self, i: int) -> np.ndarray:
        """Positions (into the entry arrays) of the entries of row i, by increasing column."""
        view = self.row_view
        return view.data[view.indptr[i] : view.indptr[i + 1]] - 1

    def col_positions(self, j: int) -> np.ndarray:
        view = self.col_view
        return view.data[view.indptr[j] : view.indptr[j + 1]] - 1

    def row_index(self, i: int) -> np.ndarray:
        """Observed column ids of row i (the set Ω^i)."""
        return self.cols[self.row_positions(i)]

    def col_index(self, j: int) -> np.ndarray:
        """Observed row ids of column j (the set Ω_j)."""
        return self.rows[self.col_positions(j)]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_view.indptr).astype(np.int64)

    def col_nnz(self) -> np.ndarray:
        return np.diff(self.col_view.indptr).astype(np.int64)

    def transpose(self) -> "SparseRatings":
        return SparseRatings(self.n_cols, self.n_rows, self.cols, self.rows, self.values)

    def __repr__(self) -> str:
        return f"SparseRatings(n_rows={self.n_rows}, n_cols={self.n_cols}, nnz={self.nnz})"


def _read_numeric_table(path: str | Path, what: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except FileNotFoundError:
        raise StradsIOError(f"cannot read {what} file {path}: no such file")
    except pd.errors.EmptyDataError:
        raise DataFormatError("empty matrix" if what == "X" else f"empty {what}")
    except pd.errors.ParserError as e:
        raise DataFormatError(f"dimension mismatch in {what} file {path}: {e}")
    except OSError as e:
        raise StradsIOError(f"cannot read {what} file {path}: {e}")
    if frame.empty:
        raise DataFormatError("empty matrix" if what == "X" else f"empty {what}")
    stripped = frame.apply(lambda column: column.str.strip())
    numeric = stripped.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        field = stripped.iat[row, col]
        if pd.isna(field) or field == "":
            raise DataFormatError(f"dimension mismatch in {what} at row {row}: expected {frame.shape[1]} fields")
        raise DataFormatError(f"non-numeric field '{field}' in {what} at row {row}, column {col}")
    return numeric.to_numpy(dtype=np.float64)


def load_lasso_csv(x_path: str | Path, y_path: str | Path) -> LassoDataset:
    """Loads a header-less CSV design matrix and a one-value-per-line response, then standardizes both.

    Raises:
        DataFormatError: On dimension mismatch, non-numeric fields or zero-variance columns.
        StradsIOError: When a file cannot be read.
    """
    raw_x = _read_numeric_table(x_path, "X")
    raw_y = _read_numeric_table(y_path, "y")
    if raw_y.shape[1] != 1:
        raise DataFormatError(f"y file must hold one value per line, found {raw_y.shape[1]} fields")
    if raw_y.shape[0] != raw_x.shape[0]:
        raise DataFormatError(f"length mismatch: y={raw_y.shape[0]}, X rows={raw_x.shape[0]}")
    X = standardize(raw_x)
    y = standardize_vector(raw_y[:, 0], "y")
    logger.info("loaded lasso data %s: N=%d, J=%d", x_path, X.n_samples, X.n_features)
    return LassoDataset(X=X, y=y)


def write_lasso_csv(dataset: LassoDataset, x_path: str | Path, y_path: str | Path) -> None:
    try:
        pd.DataFrame(dataset.X.values).to_csv(x_path, header=False, index=False, float_format="%.17g")
        pd.DataFrame(dataset.y).to_csv(y_path, header=False, index=False, float_format="%.17g")
    except OSError as e:
        raise StradsIOError(f"cannot write lasso data to {x_path}: {e}")


def load_ratings_mtx(path: str | Path) -> SparseRatings:
    """Reads the coordinate text format: a `N M nnz` header, then `i j value` lines with 1-based indices."""
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        raise StradsIOError(f"cannot read ratings file {path}: {e}")
    if not lines or not lines[0].strip():
        raise DataFormatError(f"missing header line in {path}")
    header = lines[0].split()
    try:
        n_rows, n_cols, nnz = (int(token) for token in header)
    except ValueError:
        raise DataFormatError(f"malformed header '{lines[0]}' at line 1, expected 'N M nnz'")
    rows, cols, values, line_numbers = [], [], [], []
    for line_number, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 3:
            raise DataFormatError(f"expected 'i j value' at line {line_number}")
        try:
            i, j, value = int(tokens[0]), int(tokens[1]), float(tokens[2])
        except ValueError:
            raise DataFormatError(f"non-numeric field at line {line_number}")
        rows.append(i)
        cols.append(j)
        values.append(value)
        line_numbers.append(line_number)
    frame = pd.DataFrame({"i": rows, "j": cols, "value": values, "line": line_numbers})
    out_of_rows = frame[(frame.i < 1) | (frame.i > n_rows)]
    if not out_of_rows.empty:
        first = out_of_rows.index[0]
        raise DataFormatError(f"row index {frame.at[first, 'i']} out of range at line {frame.at[first, 'line']}")
    out_of_cols = frame[(frame.j < 1) | (frame.j > n_cols)]
    if not out_of_cols.empty:
        first = out_of_cols.index[0]
        raise DataFormatError(f"column index {frame.at[first, 'j']} out of range at line {frame.at[first, 'line']}")
    duplicated = frame.duplicated(subset=["i", "j"])
    if duplicated.any():
        raise DataFormatError(f"duplicate entry at line {frame.line[duplicated].iloc[0]}")
    if len(frame) != nnz:
        raise DataFormatError(f"header declares {nnz} entries but {len(frame)} were read")
    return SparseRatings(
        n_rows,
        n_cols,
        frame.i.to_numpy(dtype=np.int64) - 1,
        frame.j.to_numpy(dtype=np.int64) - 1,
        frame.value.to_numpy(dtype=np.float64),
    )


def write_ratings_mtx(ratings: SparseRatings, path: str | Path) -> None:
    """Writes entries in file order with 17 significant digits, so loading gives back identical values."""
    lines = [f"{ratings.n_rows} {ratings.n_cols} {ratings.nnz}"]
    lines.extend(
        f"{i + 1} {j + 1} {value!r}"
        for i, j, value in zip(ratings.rows.tolist(), ratings.cols.tolist(), ratings.values.tolist())
    )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise StradsIOError(f"cannot write ratings file {path}: {e}")


def gen_synthetic_lasso(
    n: int,
    j: int,
    k_nonzero: int,
    block_size: int,
    intra_corr: float,
    noise_sd: float,
    seed: int,
) -> tuple[LassoDataset, np.ndarray]:
    """Correlated-block regression data with a sparse ±1 ground truth.

    Columns of one block share a latent factor: x = sqrt(c) z_block + sqrt(1 - c) e, which gives an
    expected pairwise correlation close to `intra_corr`. The last block is truncated when `block_size`
    does not divide `j`.

    Returns:
        `tuple[LassoDataset, np.ndarray]`: The standardized dataset and the true coefficients.
    """
    if n < 2 or j < 1:
        raise StradsConfigError(f"need n >= 2 and j >= 1, got n={n}, j={j}")
    if not 0 <= k_nonzero <= j:
        raise StradsConfigError(f"k_nonzero must lie in [0, {j}], got {k_nonzero}")
    if block_size < 1:
        raise StradsConfigError(f"block_size must be >= 1, got {block_size}")
    if not 0.0 <= intra_corr < 1.0:
        raise StradsConfigError(f"intra_corr must lie in [0, 1), got {intra_corr}")
    if noise_sd < 0:
        raise StradsConfigError(f"noise_sd must be nonnegative, got {noise_sd}")
    rng = np.random.default_rng(seed)
    n_blocks = -(-j // block_size)
    latent = rng.standard_normal((n, n_blocks))
    block_of = np.arange(j) // block_size
    raw = np.sqrt(intra_corr) * latent[:, block_of] + np.sqrt(1.0 - intra_corr) * rng.standard_normal((n, j))
    X = standardize(raw)
    true_beta = np.zeros(j)
    support = rng.choice(j, size=k_nonzero, replace=False)
    true_beta[support] = rng.choice([-1.0, 1.0], size=k_nonzero)
    y_raw = X.matvec(true_beta) + noise_sd * rng.standard_normal(n)
    y = standardize_vector(y_raw, "y")
    return LassoDataset(X=X, y=y), true_beta


def _allocate_column_counts(popularity: np.ndarray, target: int, cap: int) -> np.ndarray:
    """Largest-remainder split of `target` proportional to `popularity`, water-filled at `cap` per column."""
    counts = np.zeros(popularity.size, dtype=np.int64)
    free = np.ones(popularity.size, dtype=bool)
    remaining = target
    while remaining > 0:
        share = popularity * free
        ideal = remaining * share / share.sum()
        base = np.floor(ideal).astype(np.int64)
        leftover = remaining - int(base.sum())
        if leftover > 0:
            # ties go to the lower column id
            order = np.lexsort((np.arange(popularity.size), -(ideal - base)))
            order = order[free[order]]
            base[order[:leftover]] += 1
        proposed = counts + base
        over = proposed > cap
        if not over.any():
            counts = proposed
            break
        counts = np.minimum(proposed, cap)
        remaining = target - int(counts.sum())
        free = counts < cap
    return counts


def gen_synthetic_ratings(
    n: int,
    m: int,
    rank: int,
    zipf_exponent: float,
    target_nnz: int,
    noise_sd: float,
    seed: int,
) -> SparseRatings:
    """Low-rank ratings observed with power-law item popularity.

    Column j has popularity (j + 1) ** -zipf_exponent, so column 0 is the most popular. Per-column counts
    follow the popularity exactly (capped at n); rows are chosen uniformly without replacement inside each
    column. Values are (W* H*)_ij plus Gaussian noise for seeded rank-`rank` factors.
    """
    if n < 1 or m < 1 or rank < 1:
        raise StradsConfigError(f"need n, m, rank >= 1, got n={n}, m={m}, rank={rank}")
    if zipf_exponent < 0:
        raise StradsConfigError(f"zipf_exponent must be nonnegative, got {zipf_exponent}")
    if not 1 <= target_nnz <= n * m:
        raise StradsConfigError(f"target_nnz must lie in [1, {n * m}], got {target_nnz}")
    if noise_sd < 0:
        raise StradsConfigError(f"noise_sd must be nonnegative, got {noise_sd}")
    rng = np.random.default_rng(seed)
    popularity = (np.arange(1, m + 1, dtype=np.float64)) ** (-zipf_exponent)
    counts = _allocate_column_counts(popularity, target_nnz, n)
    rows = np.concatenate([np.sort(rng.choice(n, size=c, replace=False)) for c in counts])
    cols = np.repeat(np.arange(m), counts)
    w_true = rng.standard_normal((n, rank)) / np.sqrt(rank)
    h_true = rng.standard_normal((rank, m))
    values = np.einsum("ek,ke->e", w_true[rows], h_true[:, cols]) + noise_sd * rng.standard_normal(rows.size)
    order = np.lexsort((cols, rows))
    return SparseRatings(n, m, rows[order], cols[order], values[order])


def write_trace(path: str | Path, rows: list[TraceRecord]) -> None:
    """Writes trace records as CSV with a fixed header, UTF-8 and LF line endings."""
    frame = pd.DataFrame([record.row() for record in rows], columns=TRACE_COLUMNS)
    try:
        frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8", quoting=csv.QUOTE_MINIMAL)
    except OSError as e:
        raise StradsIOError(f"cannot write trace to {path}: {e}")


def read_trace(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.EmptyDataError) as e:
        raise StradsIOError(f"cannot read trace {path}: {e}")

"""Drug-sensitivity matrices and the cross-dataset drug recall benchmark.

A sensitivity matrix has one row per drug and one column per cell line.
For two matrices, each drug of the first is compared with every drug of the
second over their common cell lines; the benchmark records where the same
drug lands in that ranking (0 = most similar, 1 = least similar).
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConcordanceError,
    DegenerateInputError,
    KernelSpec,
    PairedSample,
    RciParams,
    UndefinedStatisticError,
    associate,
)

__all__ = [
    "MISSING_MARKERS",
    "SensitivityMatrix",
    "RecallReport",
    "read_matrix",
    "pairwise_similarity",
    "similarity_matrix",
    "drug_recall",
]

log = logging.getLogger(__name__)

MISSING_MARKERS = frozenset({"", "na", "nan", "null"})


def _parse_float(text: str, where: str) -> float:
    if text.strip().lower() in MISSING_MARKERS:
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise ConcordanceError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise ConcordanceError(f"{where}: value {text!r} is not finite")
    return v


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """Drugs x cell lines matrix of AAC values in [0, 1]; NaN marks missing."""

    drugs: tuple
    cell_lines: tuple
    values: np.ndarray
    name: str = ""
    bounds: Optional[tuple] = (0.0, 1.0)

    def __post_init__(self):
        drugs = tuple(str(d) for d in self.drugs)
        cells = tuple(str(c) for c in self.cell_lines)
        v = np.array(self.values, dtype=float)
        if v.shape != (len(drugs), len(cells)):
            raise ConcordanceError(f"values have shape {v.shape}, expected {(len(drugs), len(cells))}")
        for label, ids in (("drug", drugs), ("cell line", cells)):
            if len(set(ids)) != len(ids):
                dup = sorted({i for i in ids if ids.count(i) > 1})
                raise ConcordanceError(f"duplicate {label} identifiers: {dup[:5]}")
        if np.any(np.isinf(v)):
            raise ConcordanceError("matrix contains infinite values")
        if self.bounds is not None:
            lo, hi = self.bounds
            bad = np.argwhere((v < lo) | (v > hi))
            if bad.size:
                i, j = bad[0]
                raise ConcordanceError(
                    f"value {v[i, j]} for drug {drugs[i]!r}, cell line {cells[j]!r} is outside [{lo}, {hi}]")
        v.setflags(write=False)
        object.__setattr__(self, "drugs", drugs)
        object.__setattr__(self, "cell_lines", cells)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def row(self, drug: str) -> np.ndarray:
        return self.values[self.drugs.index(drug)]

    def restrict(self, cell_lines: Sequence[str]) -> "SensitivityMatrix":
        """Columns for ``cell_lines``, in that order."""
        index = {c: j for j, c in enumerate(self.cell_lines)}
        cols = [index[c] for c in cell_lines]
        return SensitivityMatrix(self.drugs, tuple(cell_lines), self.values[:, cols], self.name, self.bounds)

    def with_drugs(self, drugs: Sequence[str]) -> "SensitivityMatrix":
        """Same data with the row labels replaced."""
        return SensitivityMatrix(tuple(drugs), self.cell_lines, self.values, self.name, self.bounds)

    @classmethod
    def from_csv(cls, source, name: str = "", bounds: Optional[tuple] = (0.0, 1.0)) -> "SensitivityMatrix":
        """Parse CSV text or a file: header of cell-line ids after a corner
        cell, then one row per drug; empty, NA or NaN cells are missing."""
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, newline="", encoding="utf-8") as fh:
                text = fh.read()
            name = name or str(source)
        rows = list(csv.reader(io.StringIO(text)))
        rows = [r for r in rows if any(c.strip() for c in r)]
        if len(rows) < 2:
            raise ConcordanceError(f"{name or 'matrix'}: need a header row and at least one drug row")
        header = [c.strip() for c in rows[0][1:]]
        drugs, values = [], []
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != len(header) + 1:
                raise ConcordanceError(
                    f"{name or 'matrix'} line {lineno}: expected {len(header) + 1} fields, got {len(r)}")
            drugs.append(r[0].strip())
            values.append([_parse_float(c, f"{name or 'matrix'} line {lineno}, column {header[k]!r}")
                           for k, c in enumerate(r[1:])])
        return cls(tuple(drugs), tuple(header), np.array(values, dtype=float), name, bounds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["drug", *self.cell_lines])
        for d, row in zip(self.drugs, self.values):
            w.writerow([d, *("" if np.isnan(v) else repr(float(v)) for v in row)])
        return buf.getvalue()


def read_matrix(path, bounds: Optional[tuple] = (0.0, 1.0)) -> SensitivityMatrix:
    return SensitivityMatrix.from_csv(path, bounds=bounds)


def pairwise_similarity(a: np.ndarray, b: np.ndarray, statistic: str = "pearson",
                        params: Optional[RciParams] = None, kernel: Optional[KernelSpec] = None,
                        ties: str = "strict", min_cells: int = 2) -> float:
    """Statistic over the entries where both vectors are present.

    NaN when fewer than ``min_cells`` (at least 2) complete pairs remain or
    the statistic is undefined on them.
    """
    ok = ~(np.isnan(a) | np.isnan(b))
    if ok.sum() < max(min_cells, 2):
        return math.nan
    try:
        return associate(PairedSample(a[ok], b[ok]), statistic, params, kernel, ties).estimate
    except (DegenerateInputError, UndefinedStatisticError) as exc:
        log.debug("similarity undefined: %s", exc)
        return math.nan


def _map(func, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(func, items))
    return [func(i) for i in items]


def similarity_matrix(a: SensitivityMatrix, b: Optional[SensitivityMatrix] = None, statistic: str = "pearson",
                      params: Optional[RciParams] = None, kernel: Optional[KernelSpec] = None,
                      ties: str = "strict", min_cells: int = 2, threads: int = 1) -> np.ndarray:
    """Drugs(a) x drugs(b) similarities over the cell lines both matrices share.

    With ``b`` omitted the matrix of ``a`` against itself is returned.
    """
    if b is None:
        b = a
    else:
        common = sorted(set(a.cell_lines) & set(b.cell_lines))
        if not common:
            raise ConcordanceError("the matrices share no cell lines")
        a, b = a.restrict(common), b.restrict(common)
    rows = _map(lambda i: [pairwise_similarity(a.values[i], b.values[j], statistic, params, kernel, ties, min_cells)
                           for j in range(len(b.drugs))], range(len(a.drugs)), threads)
    return np.array(rows, dtype=float).reshape(len(a.drugs), len(b.drugs))


@dataclass
class RecallReport:
    """Scaled rank of each shared drug's own match, and the area under the
    ECDF of those ranks (1 = always ranked first, 0.5 = no correspondence)."""

    datasets: tuple
    statistic: str
    min_cells: int
    drugs: tuple
    ranks: np.ndarray
    candidates: np.ndarray
    area: float
    excluded: tuple = ()
    metadata: dict = field(default_factory=dict)

    def ecdf(self):
        """Distinct ranks and the fraction of drugs at or below each."""
        u, counts = np.unique(self.ranks, return_counts=True)
        return u, np.cumsum(counts) / self.ranks.size

    def to_dict(self) -> dict:
        u, f = self.ecdf()
        return {
            "datasets": list(self.datasets),
            "statistic": self.statistic,
            "min_cells": self.min_cells,
            "area": self.area,
            "n_drugs": len(self.drugs),
            "drugs": list(self.drugs),
            "ranks": self.ranks.tolist(),
            "candidates": self.candidates.tolist(),
            "ecdf": {"rank": u.tolist(), "cdf": f.tolist()},
            "excluded": list(self.excluded),
            **self.metadata,
        }

    def to_csv(self) -> str:
        lines = ["drug,rank,candidates"]
        lines += [f"{d},{r!r},{c}" for d, r, c in zip(self.drugs, self.ranks.tolist(), self.candidates.tolist())]
        return "\n".join(lines) + "\n"


def _scaled_rank(sims: np.ndarray, k: int):
    """Average-tie rank of entry ``k`` by decreasing similarity, mapped to [0, 1]."""
    ok = ~np.isnan(sims)
    s = sims[ok]
    target = sims[k]
    m = s.size
    if m == 1:
        return 0.0, 1
    better = np.count_nonzero(s > target)
    tied = np.count_nonzero(s == target) - 1
    rank = better + 0.5 * tied  # zero-based
    return rank / (m - 1), m


def drug_recall(a: SensitivityMatrix, b: SensitivityMatrix, statistic: str = "pearson",
                params: Optional[RciParams] = None, kernel: Optional[KernelSpec] = None,
                ties: str = "strict", min_cells: int = 50, threads: int = 1) -> RecallReport:
    """Cross-dataset drug recall.

    Both matrices are restricted to their common cell lines.  Each drug
    present in both with at least ``min_cells`` common non-missing cell
    lines is compared with every drug of ``b``; its rank is the average-tie
    position of its own match among candidates with a defined similarity,
    scaled so 0 is most similar.  The area under the rank ECDF equals
    1 - mean(rank).
    """
    common = sorted(set(a.cell_lines) & set(b.cell_lines))
    if not common:
        raise ConcordanceError("the matrices share no cell lines")
    a, b = a.restrict(common), b.restrict(common)
    shared = sorted(set(a.drugs) & set(b.drugs))
    qualifying, excluded = [], []
    for d in shared:
        va, vb = a.row(d), b.row(d)
        if np.count_nonzero(~(np.isnan(va) | np.isnan(vb))) >= min_cells:
            qualifying.append(d)
        else:
            excluded.append(d)
    if excluded:
        log.info("excluded %d drugs with fewer than %d common cell lines", len(excluded), min_cells)

    def one(d):
        va = a.row(d)
        sims = np.array([pairwise_similarity(va, vb, statistic, params, kernel, ties, min_cells)
                         for vb in b.values])
        k = b.drugs.index(d)
        if np.isnan(sims[k]):
            return None
        return _scaled_rank(sims, k)

    results = _map(one, qualifying, threads)
    drugs, ranks, cands = [], [], []
    for d, res in zip(qualifying, results):
        if res is None:
            excluded.append(d)
            continue
        drugs.append(d)
        ranks.append(res[0])
        cands.append(res[1])
    if not drugs:
        raise ConcordanceError(f"no drug is shared with at least {min_cells} common cell lines")
    ranks = np.array(ranks)
    return RecallReport(
        datasets=(a.name, b.name),
        statistic=statistic,
        min_cells=min_cells,
        drugs=tuple(drugs),
        ranks=ranks,
        candidates=np.array(cands, dtype=int),
        area=float(1 - ranks.mean()),
        excluded=tuple(sorted(excluded)),
        metadata={"common_cell_lines": len(common)},
    )

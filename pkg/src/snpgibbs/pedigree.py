"""Numerator relationship matrices from pedigree records.

The recursion fills the matrix row by row over a topologically ordered
pedigree (parents before offspring, founders first):

  both parents g, h known:  R[j,i] = 0.5*(R[i,g] + R[i,h]),  R[j,j] = 1 + 0.5*R[g,h]
  one parent g known:       R[j,i] = 0.5*R[i,g],             R[j,j] = 1
  no parent known:          R[j,i] = 0,                      R[j,j] = 1

Founders are treated as an unrelated base population, so the leading
base block of the matrix is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "PedigreeError",
    "PedigreeRecord",
    "OrderedPedigree",
    "RelationshipMatrix",
    "order_pedigree",
    "build_numerator_matrix",
    "extract_submatrix",
]


class PedigreeError(ValueError):
    """Invalid pedigree structure (cycles, dangling parents, bad ordering)."""


@dataclass(frozen=True)
class PedigreeRecord:
    """One individual with optional sire/dam references."""

    individual_id: str
    sire_id: Optional[str] = None
    dam_id: Optional[str] = None

    def parents(self) -> tuple[str, ...]:
        return tuple(p for p in (self.sire_id, self.dam_id) if p is not None)


@dataclass(frozen=True)
class OrderedPedigree:
    """Topologically ordered records; the first ``base_count`` are founders."""

    records: tuple[PedigreeRecord, ...]
    base_count: int

    def __post_init__(self):
        ids = [r.individual_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise PedigreeError("duplicate individual ids in pedigree")
        position = {rid: k for k, rid in enumerate(ids)}
        for k, rec in enumerate(self.records):
            if k < self.base_count and rec.parents():
                raise PedigreeError(
                    f"record {rec.individual_id!r} in base block has a known parent"
                )
            for pid in rec.parents():
                if pid not in position:
                    raise PedigreeError(f"unknown parent id {pid!r}")
                if position[pid] >= k:
                    raise PedigreeError(
                        f"parent {pid!r} does not precede offspring {rec.individual_id!r}"
                    )

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.individual_id for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


class RelationshipMatrix:
    """Dense symmetric kinship matrix keyed by individual ids."""

    def __init__(self, ids: Sequence[str], entries: np.ndarray):
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("kinship entries must be a square matrix")
        if len(ids) != entries.shape[0]:
            raise ValueError("id count does not match matrix dimension")
        if not np.array_equal(entries, entries.T):
            # tolerate tiny asymmetry from file round trips, nothing more
            if np.max(np.abs(entries - entries.T)) > 1e-12:
                raise ValueError("kinship matrix is not symmetric")
            entries = 0.5 * (entries + entries.T)
        diag = np.diag(entries)
        if entries.size and (diag.min() < 1.0 - 1e-12 or diag.max() > 1.5 + 1e-12):
            raise ValueError("kinship diagonal must lie in [1, 1.5]")
        self.ids = tuple(str(i) for i in ids)
        self.entries = entries
        self._index = {rid: k for k, rid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, ids: Sequence[str]) -> "RelationshipMatrix":
        return cls(ids, np.eye(len(ids)))

    def index_of(self, individual_id: str) -> int:
        try:
            return self._index[individual_id]
        except KeyError:
            raise KeyError(f"unknown individual id {individual_id!r}") from None

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def is_positive_definite(self) -> bool:
        try:
            np.linalg.cholesky(self.entries)
            return True
        except np.linalg.LinAlgError:
            return False

    def __repr__(self) -> str:  # pragma: no cover
        return f"RelationshipMatrix(dim={self.dim})"


def order_pedigree(records: Iterable[PedigreeRecord]) -> OrderedPedigree:
    """Topologically order pedigree records, founders first.

    Ordering is deterministic (ids sorted within each ready set), so the
    same record set always yields the same OrderedPedigree regardless of
    input order. Raises PedigreeError on dangling parent ids or cycles,
    naming the offender.
    """
    by_id: dict[str, PedigreeRecord] = {}
    for rec in records:
        if rec.individual_id in by_id:
            raise PedigreeError(f"duplicate individual id {rec.individual_id!r}")
        by_id[rec.individual_id] = rec
    for rec in by_id.values():
        for pid in rec.parents():
            if pid not in by_id:
                raise PedigreeError(
                    f"parent id {pid!r} of {rec.individual_id!r} not in pedigree"
                )

    placed: set[str] = set()
    ordered: list[PedigreeRecord] = []
    pending = set(by_id)
    base_count = 0
    while pending:
        ready = sorted(
            rid for rid in pending if all(p in placed for p in by_id[rid].parents())
        )
        if not ready:
            raise PedigreeError(_describe_cycle(by_id, pending))
        for rid in ready:
            rec = by_id[rid]
            if not rec.parents():
                base_count += 1
            ordered.append(rec)
            placed.add(rid)
            pending.discard(rid)
    # founders are all ready in the first pass, hence already leading
    return OrderedPedigree(tuple(ordered), base_count)


def _describe_cycle(by_id: dict[str, PedigreeRecord], pending: set[str]) -> str:
    # walk parent links inside the unplaceable set until an id repeats
    start = sorted(pending)[0]
    chain = [start]
    seen = {start}
    current = start
    while True:
        nxt = next((p for p in by_id[current].parents() if p in pending), None)
        if nxt is None:  # pragma: no cover - pending nodes always have a pending parent
            break
        chain.append(nxt)
        if nxt in seen:
            k = chain.index(nxt)
            return "pedigree cycle detected: " + " -> ".join(chain[k:])
        seen.add(nxt)
        current = nxt
    return "pedigree cycle detected among: " + ", ".join(sorted(pending))


def build_numerator_matrix(ped: OrderedPedigree) -> RelationshipMatrix:
    """Apply the three-case kinship recursion over an ordered pedigree."""
    n = len(ped)
    pos = {rid: k for k, rid in enumerate(ped.ids)}
    R = np.zeros((n, n))
    for j, rec in enumerate(ped.records):
        parents = [pos[p] for p in rec.parents()]
        if len(parents) == 2:
            g, h = parents
            row = 0.5 * (R[:j, g] + R[:j, h])
            R[j, j] = 1.0 + 0.5 * R[g, h]
        elif len(parents) == 1:
            g = parents[0]
            row = 0.5 * R[:j, g]
            R[j, j] = 1.0
        else:
            row = np.zeros(j)
            R[j, j] = 1.0
        R[j, :j] = row
        R[:j, j] = row
    return RelationshipMatrix(ped.ids, R)


def extract_submatrix(R: RelationshipMatrix, ids: Sequence[str]) -> RelationshipMatrix:
    """Principal submatrix on the selected ids, in the given order."""
    idx = np.array([R.index_of(i) for i in ids], dtype=int)
    return RelationshipMatrix(list(ids), R.entries[np.ix_(idx, idx)])

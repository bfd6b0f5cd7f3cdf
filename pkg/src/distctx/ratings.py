"""MovieLens-1M ingestion and low-rank factorisation by alternating least squares."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from distctx.errors import ContractError, DataError
from distctx.linalg import LinearStatistics, PsdAccumulator, ridge_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RatingsDataset:
    users: np.ndarray  # dense user index per rating
    items: np.ndarray  # dense item index per rating
    ratings: np.ndarray
    user_ids: list[int]
    item_ids: list[int]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return self.ratings.shape[0]

    @classmethod
    def from_triples(cls, triples) -> "RatingsDataset":
        """Build from ``(user_id, item_id, rating)``; later duplicates replace earlier ones."""
        user_index: dict[int, int] = {}
        item_index: dict[int, int] = {}
        cells: dict[tuple[int, int], float] = {}
        for user, item, rating in triples:
            u = user_index.setdefault(user, len(user_index))
            i = item_index.setdefault(item, len(item_index))
            cells.pop((u, i), None)
            cells[(u, i)] = float(rating)
        if not cells:
            raise DataError("empty dataset")
        keys = np.array(list(cells.keys()), dtype=np.int64)
        return cls(
            users=keys[:, 0],
            items=keys[:, 1],
            ratings=np.array(list(cells.values()), dtype=np.float64),
            user_ids=list(user_index),
            item_ids=list(item_index),
        )

    def subsample(self, fraction: float, seed: int = 0) -> "RatingsDataset":
        rng = np.random.default_rng(seed)
        keep = rng.random(len(self)) < fraction
        return RatingsDataset.from_triples(
            (self.user_ids[u], self.item_ids[i], r)
            for u, i, r in zip(self.users[keep], self.items[keep], self.ratings[keep])
        )


def ingest_ratings(path: str | Path) -> RatingsDataset:
    """Parse an ml-1m ``ratings.dat`` file (``UserID::MovieID::Rating::Timestamp``)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"ratings file not found: {path}")

    def triples():
        with path.open(encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split("::")
                if len(parts) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 '::'-separated fields")
                try:
                    user, item, rating, _ = (int(p) for p in parts)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-integer field in {line!r}") from None
                if not 1 <= rating <= 5:
                    raise DataError(f"{path}:{lineno}: rating {rating} outside 1..5")
                yield user, item, rating

    return RatingsDataset.from_triples(triples())


def _groups(keys: np.ndarray, n: int) -> list[np.ndarray]:
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(n + 1))
    return [order[bounds[j] : bounds[j + 1]] for j in range(n)]


def _half_step(fixed: np.ndarray, groups, other_idx, ratings, reg: float, out: np.ndarray) -> None:
    for row, rows in enumerate(groups):
        if rows.size == 0:
            out[row] = 0.0
            continue
        f = fixed[other_idx[rows]]
        gram = PsdAccumulator(f.T @ f, reg)
        out[row] = ridge_solve(gram, LinearStatistics(f.T @ ratings[rows]))


def rmse(dataset: RatingsDataset, user_feats: np.ndarray, item_feats: np.ndarray) -> float:
    pred = np.einsum("ij,ij->i", user_feats[dataset.users], item_feats[dataset.items])
    return float(np.sqrt(np.mean((pred - dataset.ratings) ** 2)))


def factorize(
    dataset: RatingsDataset,
    rank: int = 6,
    iterations: int = 25,
    reg: float = 0.1,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Rank-``rank`` factors minimising squared error plus ``reg`` times squared norms.

    Each half-step solves one small ridge system per user (or item) on the
    observed ratings only.
    """
    if rank < 1:
        raise ContractError("rank must be >= 1")
    if rank > min(dataset.n_users, dataset.n_items):
        raise ContractError(
            f"rank {rank} exceeds min(#users, #items) = {min(dataset.n_users, dataset.n_items)}"
        )
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(float(np.mean(dataset.ratings)), 1e-12) / rank)
    users = np.zeros((dataset.n_users, rank))
    items = scale * (1.0 + 0.1 * rng.standard_normal((dataset.n_items, rank)))
    by_user = _groups(dataset.users, dataset.n_users)
    by_item = _groups(dataset.items, dataset.n_items)
    for _ in range(iterations):
        _half_step(items, by_user, dataset.items, dataset.ratings, reg, users)
        _half_step(users, by_item, dataset.users, dataset.ratings, reg, items)
    log.info("ALS rank=%d iterations=%d training RMSE=%.6f", rank, iterations,
             rmse(dataset, users, items))
    return users, items


def write_factors(path: str | Path, user_feats: np.ndarray, item_feats: np.ndarray) -> None:
    k = user_feats.shape[1]
    lines = [f"k={k} users={user_feats.shape[0]} items={item_feats.shape[0]}"]
    for row in np.vstack([user_feats, item_feats]):
        lines.append(" ".join(f"{v:.17g}" for v in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise DataError(f"cannot write factors to {path}: {exc}") from None


def read_factors(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read factors {path}: {exc}") from None
    if not lines:
        raise DataError(f"{path}: empty factors file")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        k, n_users, n_items = int(header["k"]), int(header["users"]), int(header["items"])
    except (KeyError, ValueError):
        raise DataError(f"{path}: bad header {lines[0]!r}") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n_users + n_items:
        raise DataError(f"{path}: expected {n_users + n_items} rows, found {len(rows)}")
    try:
        data = np.array([[float(v) for v in ln.split()] for ln in rows])
    except ValueError:
        raise DataError(f"{path}: non-numeric factor entry") from None
    if data.shape[1] != k:
        raise DataError(f"{path}: rows have {data.shape[1]} columns, header says k={k}")
    return data[:n_users], data[n_users:]

"""Bagged regression trees predicting goals, with out-of-bag permutation importance.

Trees are CART regression trees: each split maximises the reduction of the
squared error among ``mtry`` randomly drawn features.  Numeric features split
on a threshold (``x <= t`` goes left); categorical features split on a subset
of categories found by exhaustive search.  Tree ``b`` draws its bootstrap
sample and feature subsets from a generator seeded with ``(seed, b)``.
"""

from __future__ import annotations

import io
import json
import logging
import math
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .design import CATEGORICAL, FEATURE_NAMES, FeatureRow, design_matrix, design_response
from .errors import DataError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_INTENSITY = 1e-6


class ForestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 5000
    mtry: int | None = None
    min_node: int = 5
    seed: int = 0

    def resolved_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(n_features / 3)
        return max(1, min(n_features, m))


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    category_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        return _apply_kernel(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                             self.category_mask, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@njit(cache=True)
def _apply_kernel(X, feature, threshold, cmask, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            x = X[i, feature[node]]
            if cmask[node] != 0:
                go_left = (cmask[node] >> int(x)) & 1 == 1
            else:
                go_left = x <= threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = node
    return out


@njit(cache=True)
def _grow_kernel(X, y, sample, is_cat, mtry, min_node, keys):
    n = sample.size
    p = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    cmask = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)

    idx = sample.copy()
    buf = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)

    s = 0.0
    for i in range(n):
        s += y[idx[i]]
    value[0] = s / n
    count[0] = n
    n_nodes = 1
    sp = 0
    st_node[0], st_lo[0], st_hi[0] = 0, 0, n
    sp = 1
    cat_sum = np.zeros(64)
    cat_cnt = np.zeros(64, dtype=np.int64)
    present = np.empty(64, dtype=np.int64)

    while sp > 0:
        sp -= 1
        node, lo, hi = st_node[sp], st_lo[sp], st_hi[sp]
        m = hi - lo
        if m < max(min_node, 2):
            continue
        y0 = y[idx[lo]]
        constant = True
        total = 0.0
        for i in range(lo, hi):
            v = y[idx[i]]
            total += v
            if v != y0:
                constant = False
        if constant:
            continue
        base = total * total / m
        tol = 1e-12 * max(1.0, base)
        feats = np.sort(np.argsort(keys[node])[:mtry])
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        best_mask = 0
        for f in feats:
            if is_cat[f]:
                cat_sum[:] = 0.0
                cat_cnt[:] = 0
                for i in range(lo, hi):
                    c = int(X[idx[i], f])
                    cat_sum[c] += y[idx[i]]
                    cat_cnt[c] += 1
                k = 0
                for c in range(64):
                    if cat_cnt[c] > 0:
                        present[k] = c
                        k += 1
                if k < 2:
                    continue
                # subsets that contain the first present category, full set excluded
                for bits in range(0, (1 << (k - 1)) - 1):
                    mask = 1 << present[0]
                    sl = cat_sum[present[0]]
                    nl = cat_cnt[present[0]]
                    for j in range(1, k):
                        if (bits >> (j - 1)) & 1:
                            mask |= 1 << present[j]
                            sl += cat_sum[present[j]]
                            nl += cat_cnt[present[j]]
                    sr = total - sl
                    gain = sl * sl / nl + sr * sr / (m - nl) - base
                    if gain > best_gain + tol or (best_f == f and abs(gain - best_gain) <= tol and mask < best_mask):
                        best_gain, best_f, best_thr, best_mask = gain, f, 0.0, mask
            else:
                xs = np.empty(m)
                for i in range(m):
                    xs[i] = X[idx[lo + i], f]
                order = np.argsort(xs)
                sl = 0.0
                for j in range(m - 1):
                    sl += y[idx[lo + order[j]]]
                    a = xs[order[j]]
                    b = xs[order[j + 1]]
                    if b <= a:
                        continue
                    nl = j + 1
                    sr = total - sl
                    gain = sl * sl / nl + sr * sr / (m - nl) - base
                    if gain > best_gain + tol:
                        thr = 0.5 * (a + b)
                        if thr >= b:
                            thr = a
                        best_gain, best_f, best_thr, best_mask = gain, f, thr, 0
        if best_f < 0 or not best_gain > tol:
            continue
        # stable partition of idx[lo:hi]
        nl = 0
        nr = 0
        for i in range(lo, hi):
            r = idx[i]
            x = X[r, best_f]
            if best_mask != 0:
                go_left = (best_mask >> int(x)) & 1 == 1
            else:
                go_left = x <= best_thr
            if go_left:
                idx[lo + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        if nl == 0 or nr == 0:
            continue
        for i in range(nr):
            idx[lo + nl + i] = buf[i]
        feature[node], threshold[node], cmask[node] = best_f, best_thr, best_mask
        for child, clo, chi in ((n_nodes, lo, lo + nl), (n_nodes + 1, lo + nl, hi)):
            s = 0.0
            for i in range(clo, chi):
                s += y[idx[i]]
            value[child] = s / (chi - clo)
            count[child] = chi - clo
        left[node], right[node] = n_nodes, n_nodes + 1
        st_node[sp], st_lo[sp], st_hi[sp] = n_nodes + 1, lo + nl, hi
        st_node[sp + 1], st_lo[sp + 1], st_hi[sp + 1] = n_nodes, lo, lo + nl
        sp += 2
        n_nodes += 2
    return (feature[:n_nodes], threshold[:n_nodes], cmask[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], count[:n_nodes])


def grow_tree(X: np.ndarray, y: np.ndarray, sample: np.ndarray, categorical: np.ndarray,
              mtry: int, min_node: int, rng: np.random.Generator) -> RegressionTree:
    """Grow one tree on the rows ``sample`` (indices into ``X``, repeats allowed).

    The candidate features of node ``k`` are the ``mtry`` smallest entries of
    row ``k`` of a uniform key matrix drawn from ``rng``.  Ties between equal
    gains go to the lower feature index, then to the lower threshold (or
    category mask).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    keys = rng.random((2 * len(sample) + 1, X.shape[1]))
    arrays = _grow_kernel(X, np.ascontiguousarray(y, dtype=np.float64), np.asarray(sample, dtype=np.int64),
                          np.asarray(categorical, dtype=np.bool_), int(mtry), int(min_node), keys)
    return RegressionTree(*(a.copy() for a in arrays))


@dataclass
class Forest:
    trees: list
    oob_index: list
    feature_schema: tuple
    categorical: tuple
    rng_seed: int
    n_train: int
    config: ForestConfig = field(default_factory=ForestConfig)
    metadata: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        return np.array([t.predict(X) for t in self.trees])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean of the tree predictions, floored at :data:`MIN_INTENSITY`."""
        return np.maximum(self.tree_predictions(X).mean(axis=0), MIN_INTENSITY)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_schema):
            raise DataError(f"expected {len(self.feature_schema)} features "
                            f"({', '.join(self.feature_schema)}), got shape {X.shape}")
        return X


def fit_forest_arrays(X: np.ndarray, y: np.ndarray, cfg: ForestConfig,
                      feature_names: Sequence[str] | None = None,
                      categorical: Sequence[bool] | None = None) -> Forest:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise DataError("need a non-empty design with one response per row")
    if cfg.n_trees < 1:
        raise DataError("n_trees must be at least 1")
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(p))
    cat = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    if len(names) != p or len(cat) != p:
        raise DataError("feature names / categorical flags do not match the design width")
    if np.all(y == y[0]):
        warnings.warn("response is constant; every tree is a single leaf", ForestWarning, stacklevel=2)
    mtry = cfg.resolved_mtry(p)
    trees, oob = [], []
    for b in range(cfg.n_trees):
        rng = np.random.default_rng([cfg.seed, b])
        sample = rng.integers(0, n, size=n)
        trees.append(grow_tree(X, y, sample, cat, mtry, cfg.min_node, rng))
        in_bag = np.zeros(n, dtype=bool)
        in_bag[sample] = True
        oob.append(np.flatnonzero(~in_bag))
    return Forest(trees=trees, oob_index=oob, feature_schema=names, categorical=tuple(cat.tolist()),
                  rng_seed=cfg.seed, n_train=n, config=cfg)


def fit_forest(rows: Sequence[FeatureRow], cfg: ForestConfig | None = None) -> Forest:
    """Fit the goal forest on design rows (see :mod:`wcforecast.design`)."""
    cfg = cfg or ForestConfig()
    if not rows:
        raise DataError("no training rows")
    categorical = [name in CATEGORICAL for name in FEATURE_NAMES]
    return fit_forest_arrays(design_matrix(rows), design_response(rows), cfg, FEATURE_NAMES, categorical)


def fit_tree(X: np.ndarray, y: np.ndarray, min_node: int = 5, mtry: int | None = None,
             seed: int = 0, categorical: Sequence[bool] | None = None) -> RegressionTree:
    """A single tree on the full data (no bootstrap)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    cat = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    return grow_tree(X, y, np.arange(len(X)), cat, mtry or p, min_node, np.random.default_rng(seed))


def predict_goals(forest: Forest, row: FeatureRow | Sequence[float]) -> float:
    """Expected goals for one row: the mean tree prediction, at least :data:`MIN_INTENSITY`."""
    x = row.vector() if isinstance(row, FeatureRow) else list(row)
    if isinstance(row, FeatureRow) and tuple(forest.feature_schema) != FEATURE_NAMES:
        raise DataError("forest was not trained on the match design schema")
    return float(forest.predict(np.array([x], dtype=float))[0])


# ---------------------------------------------------------------------------
# importance


@dataclass(frozen=True)
class ImportanceResult:
    features: tuple
    deltas: np.ndarray  # trees with a non-empty OOB set x features
    skipped: int

    @property
    def mean(self) -> np.ndarray:
        return self.deltas.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        k = self.deltas.shape[0]
        return self.deltas.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.full(len(self.features), np.nan)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.features, self.mean.tolist()))


def oob_permutation_deltas(forest: Forest, X: np.ndarray, y: np.ndarray, seed: int) -> ImportanceResult:
    """Per-tree increase of OOB squared error after permuting each feature.

    The permutation for tree ``b`` is drawn from a generator seeded with
    ``(seed, b)``; the input matrix is never modified.
    """
    X = forest._check(X)
    y = np.asarray(y, dtype=float)
    if len(X) != forest.n_train:
        raise DataError(f"importance needs the {forest.n_train} training rows, got {len(X)}")
    p = X.shape[1]
    deltas, skipped = [], 0
    for b, (tree, oob) in enumerate(zip(forest.trees, forest.oob_index)):
        if len(oob) == 0:
            skipped += 1
            continue
        rng = np.random.default_rng([seed, b])
        Xo, yo = X[oob], y[oob]
        k = len(oob)
        base = np.mean((tree.predict(Xo) - yo) ** 2)
        # all p permuted copies stacked, predicted in one pass
        Xp = np.tile(Xo, (p, 1))
        for f in range(p):
            Xp[f * k:(f + 1) * k, f] = Xo[rng.permutation(k), f]
        sq = (tree.predict(Xp) - np.tile(yo, p)) ** 2
        row = sq.reshape(p, k).mean(axis=1) - base
        deltas.append(row)
    if skipped:
        logger.info("%d of %d trees had no out-of-bag rows", skipped, forest.n_trees)
    return ImportanceResult(tuple(forest.feature_schema), np.array(deltas).reshape(-1, p), skipped)


def permutation_importance(forest: Forest, rows, seed: int, y=None) -> dict[str, float]:
    """Mean OOB permutation importance per feature.

    ``rows`` are the training design rows, or a matrix together with ``y``.
    """
    if y is None:
        X, y = design_matrix(rows), design_response(rows)
    else:
        X = rows
    return oob_permutation_deltas(forest, X, y, seed).as_dict()


# ---------------------------------------------------------------------------
# persistence


def save_forest(forest: Forest, path) -> None:
    """Write an ``.npz`` archive with concatenated node arrays and a JSON header."""
    offsets = np.cumsum([0] + [t.n_nodes for t in forest.trees])
    in_bag = np.ones((forest.n_trees, forest.n_train), dtype=bool)
    for b, oob in enumerate(forest.oob_index):
        in_bag[b, oob] = False
    header = {
        "format": "wcforecast-forest",
        "version": FORMAT_VERSION,
        "feature_schema": list(forest.feature_schema),
        "categorical": list(forest.categorical),
        "rng_seed": forest.rng_seed,
        "n_train": forest.n_train,
        "config": {"n_trees": forest.config.n_trees, "mtry": forest.config.mtry,
                   "min_node": forest.config.min_node, "seed": forest.config.seed},
        "metadata": forest.metadata,
    }
    arrays = {name: np.concatenate([getattr(t, name) for t in forest.trees])
              for name in ("feature", "threshold", "category_mask", "left", "right", "value", "count")}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    arrays["offsets"] = offsets
    arrays["in_bag"] = np.packbits(in_bag, axis=1)
    buf = io.BytesIO()
    # fixed entry timestamps keep the archive byte-reproducible
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, member.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_forest(path) -> Forest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("format") != "wcforecast-forest":
                raise DataError(f"{path.name} is not a forest artifact")
            if header["version"] > FORMAT_VERSION:
                raise DataError(f"{path.name}: unsupported forest format version {header['version']}")
            offsets = data["offsets"]
            arrays = {k: data[k] for k in ("feature", "threshold", "category_mask", "left", "right", "value", "count")}
            in_bag = np.unpackbits(data["in_bag"], axis=1, count=header["n_train"]).astype(bool)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read forest artifact {path.name}: {exc}") from None
    trees = [RegressionTree(**{k: v[offsets[b]:offsets[b + 1]] for k, v in arrays.items()})
             for b in range(len(offsets) - 1)]
    cfg = ForestConfig(**header["config"])
    return Forest(trees=trees, oob_index=[np.flatnonzero(~m) for m in in_bag],
                  feature_schema=tuple(header["feature_schema"]), categorical=tuple(header["categorical"]),
                  rng_seed=header["rng_seed"], n_train=header["n_train"], config=cfg,
                  metadata=header.get("metadata", {}))

"""Feature-based split predictor: per-bucket logistic regression trained by
gradient descent, its .spm persistence, and conversion of predictions into
depth bounds."""

import struct
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..analysis import ColocatedMaps, ColocatedRef, SegmentAnalysis, colocated_maps

SPM_MAGIC = b"SPM1"
N_FEATURES = 10
QP_BUCKET = 6
PREDICT_DEPTHS = (0, 1, 2)


@dataclass(frozen=True)
class SplitFeatures:
    mean: float
    variance: float
    ref_depth: int
    ref_cost: float          # reference leaf RD cost per pixel
    ref_mode_class: int      # 0 skip, 1 inter, 2 intra
    qp_delta: int
    L: float
    depth: int

    def __post_init__(self):
        v = (self.mean, self.variance, self.ref_cost, self.qp_delta, self.L)
        if not all(np.isfinite(v)):
            raise ValueError("features must be finite")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")

    def vector(self):
        return _vectorize(np.array([self.mean]), np.array([self.variance]), np.array([self.ref_depth]),
                          np.array([self.ref_cost]), np.array([self.ref_mode_class]),
                          self.qp_delta, self.L, self.depth)[0]


def _vectorize(mean, var, rdepth, rcost, rclass, qp_delta, L, depth):
    n = len(mean)
    out = np.empty((n, N_FEATURES))
    out[:, 0] = mean / 255.0
    out[:, 1] = np.log1p(var) / 8.0
    out[:, 2] = rdepth / 3.0
    out[:, 3] = np.log1p(rcost) / 8.0
    out[:, 4] = rclass == 0
    out[:, 5] = rclass == 2
    out[:, 6] = qp_delta / 51.0
    out[:, 7] = np.log2(float(L)) / 4.0
    out[:, 8] = depth / 3.0
    # interaction of texture and reference depth
    out[:, 9] = out[:, 1] * out[:, 2]
    return out


def _mode_class(mode):
    mode = np.asarray(mode)
    return np.where(mode == 0, 0, np.where(mode >= 9, 2, 1))


def extract_split_features(block, colocated: ColocatedRef, qp_delta, L_i, depth) -> SplitFeatures:
    """Features of one target CU given its raw luma block and the reference
    decision co-located with the CU centre."""
    b = np.asarray(block, np.float64)
    side = 64 >> colocated.depth
    return SplitFeatures(float(b.mean()), float(b.var()), colocated.depth,
                         colocated.rd_cost / 256.0 / (side * side), int(_mode_class(int(colocated.mode))),
                         int(qp_delta), float(L_i), int(depth))


def feature_grid(luma, maps: ColocatedMaps, qp_delta, L, depth):
    """Feature matrix for every depth-d CU lying fully inside the frame.

    Returns (X[n, F], cu_rows, cu_cols) with CU grid coordinates."""
    H, W = luma.shape
    s = 64 >> depth
    ny, nx = H // s, W // s
    blk = np.asarray(luma[: ny * s, : nx * s], np.float64).reshape(ny, s, nx, s)
    mean = blk.mean(axis=(1, 3))
    var = blk.var(axis=(1, 3))
    cy = (np.arange(ny) * s + s // 2) >> 3
    cx = (np.arange(nx) * s + s // 2) >> 3
    sel = np.ix_(cy, cx)
    rd = maps.depth8[sel]
    side = (64 >> rd).astype(np.float64)
    rc = maps.cost8[sel] / 256.0 / (side * side)
    cls = _mode_class(maps.mode8[sel])
    X = _vectorize(mean.ravel(), var.ravel(), rd.ravel(), rc.ravel(), cls.ravel(), qp_delta, L, depth)
    rows, cols = np.divmod(np.arange(ny * nx), nx)
    return X, rows, cols


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class BucketModel:
    weights: np.ndarray
    bias: float
    threshold: float = 0.5
    accuracy: float = float("nan")      # held-out
    baseline: float = float("nan")      # held-out majority-class rate
    samples: int = 0

    def __post_init__(self):
        if len(self.weights) != N_FEATURES:
            raise ValueError(f"weight vector must have {N_FEATURES} entries")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    def probability(self, X):
        return _logistic(np.asarray(X) @ self.weights + self.bias)


BucketKey = Tuple[int, int, int, int]          # depth, qp bucket, ref res id, target res id


def bucket_key(depth, qp, ref_res, tgt_res) -> BucketKey:
    return int(depth), int(qp) // QP_BUCKET, int(ref_res), int(tgt_res)


@dataclass
class SplitPredictor:
    buckets: Dict[BucketKey, BucketModel] = field(default_factory=dict)
    # trained but left out for lack of held-out gain; kept for reporting only
    rejected: Dict[BucketKey, BucketModel] = field(default_factory=dict)

    def model(self, key) -> Optional[BucketModel]:
        return self.buckets.get(key)


def predict_split(model: BucketModel, f: SplitFeatures):
    p = float(model.probability(f.vector()))
    return ("split" if p >= model.threshold else "no_split"), p


# --------------------------------------------------------------- training

@dataclass
class TrainParams:
    learning_rate: float = 2.0
    epochs: int = 400
    l2: float = 1e-4
    holdout: float = 0.2
    seed: int = 1
    # a bucket is used only if its held-out accuracy beats always answering
    # the majority class by this much; otherwise it is left out and the
    # encoder falls back to the full depth range
    min_gain: float = 0.05


def _fit(X, y, params: TrainParams):
    """Full-batch gradient descent on the mean log-loss with an L2 term."""
    n, f = X.shape
    w = np.zeros(f)
    b = 0.0
    for _ in range(params.epochs):
        p = _logistic(X @ w + b)
        g = p - y
        w -= params.learning_rate * (X.T @ g / n + params.l2 * w)
        b -= params.learning_rate * g.mean()
    return w, b


def train_predictor(dataset: Dict[BucketKey, Tuple[np.ndarray, np.ndarray]],
                    params: TrainParams = TrainParams()) -> SplitPredictor:
    """dataset maps bucket key -> (X[n, F], labels[n] in {0, 1})."""
    out = SplitPredictor()
    for key in sorted(dataset):
        X, y = dataset[key]
        X = np.asarray(X, np.float64)
        y = np.asarray(y, np.float64)
        if len(y) == 0:
            continue
        rng = np.random.default_rng(params.seed)
        perm = rng.permutation(len(y))
        n_test = int(round(params.holdout * len(y))) if len(y) >= 10 else 0
        test, tr = perm[:n_test], perm[n_test:]
        ytr = y[tr]
        if ytr.min() == ytr.max():
            warnings.warn(f"single-class bucket {key}; using a constant model")
            w = np.zeros(N_FEATURES)
            b = 20.0 if ytr[0] == 1 else -20.0
        else:
            w, b = _fit(X[tr], ytr, params)
        m = BucketModel(w, float(b), samples=len(y))
        if n_test:
            pred = m.probability(X[test]) >= m.threshold
            m.accuracy = float(np.mean(pred == (y[test] == 1)))
            maj = 1.0 if ytr.mean() >= 0.5 else 0.0
            m.baseline = float(np.mean(y[test] == maj))
        if m.accuracy >= m.baseline + params.min_gain:
            out.buckets[key] = m
        else:
            out.rejected[key] = m
    return out


# ---------------------------------------------------------------- dataset

def split_samples(luma_frames, target: SegmentAnalysis, ref: SegmentAnalysis, dataset=None):
    """Add the split decisions of a stand-alone target encode to dataset
    (bucket key -> lists of feature rows and labels).  A sample is every
    depth-d CU the target's quadtree reached, labelled 1 when it split;
    features come from the co-located reference decision."""
    dataset = {} if dataset is None else dataset
    qpd = target.qp - ref.qp
    for f, fa in enumerate(target.frames):
        luma = luma_frames[f]
        H, W = luma.shape
        maps = colocated_maps(ref.frames[f], W, H)
        tdepth = fa.maps[0]
        for d in PREDICT_DEPTHS:
            X, rows, cols = feature_grid(luma, maps, qpd, maps.scale, d)
            if not len(X):
                continue
            k = (64 >> d) // 8
            td = tdepth[rows * k, cols * k]
            keep = td >= d
            xs, ys = dataset.setdefault(bucket_key(d, target.qp, ref.resolution.index, target.resolution.index),
                                        ([], []))
            xs.append(X[keep])
            ys.append((td[keep] > d).astype(np.float64))
    return dataset


def stack_dataset(dataset):
    """Lists from split_samples -> {key: (X, y)} arrays for train_predictor."""
    return {k: (np.concatenate(xs), np.concatenate(ys)) for k, (xs, ys) in dataset.items()}


# ------------------------------------------------------------- .spm I/O

_HDR = struct.Struct("<4sIH")
_BK = struct.Struct("<BBBB")


class PredictorFormatError(ValueError):
    pass


def save_predictor(model: SplitPredictor) -> bytes:
    parts = [_HDR.pack(SPM_MAGIC, len(model.buckets), N_FEATURES)]
    for key in sorted(model.buckets):
        m = model.buckets[key]
        parts.append(_BK.pack(*key))
        parts.append(np.array([m.threshold, m.bias, *m.weights], "<f8").tobytes())
    return b"".join(parts)


def load_predictor(data: bytes) -> SplitPredictor:
    if len(data) < _HDR.size:
        raise PredictorFormatError("truncated predictor header")
    magic, count, nf = _HDR.unpack_from(data)
    if magic != SPM_MAGIC:
        raise PredictorFormatError(f"bad magic {magic!r}")
    if nf != N_FEATURES:
        raise PredictorFormatError(f"feature count {nf} != {N_FEATURES}")
    rec = _BK.size + 8 * (nf + 2)
    if len(data) != _HDR.size + count * rec:
        raise PredictorFormatError("predictor payload size mismatch")
    out = SplitPredictor()
    off = _HDR.size
    for _ in range(count):
        key = _BK.unpack_from(data, off)
        v = np.frombuffer(data, "<f8", nf + 2, off + _BK.size).astype(np.float64)
        out.buckets[tuple(int(k) for k in key)] = BucketModel(v[2:].copy(), float(v[1]), float(v[0]))
        off += rec
    return out


# ------------------------------------------------------ bounds from splits

def predicted_bounds(model: SplitPredictor, luma, maps: ColocatedMaps, qp, ref_qp, ref_res, tgt_res):
    """Top-down walk: a no_split at depth d caps the block at d, a split
    raises its lower bound to d + 1; depths without a bucket stop the walk
    (full range below).  Returns (lo8, hi8)."""
    H, W = luma.shape
    lo = np.zeros((H // 8, W // 8), np.int64)
    hi = np.full((H // 8, W // 8), 3, np.int64)
    L = maps.scale
    for d in PREDICT_DEPTHS:
        m = model.model(bucket_key(d, qp, ref_res, tgt_res))
        if m is None:
            break
        X, rows, cols = feature_grid(luma, maps, qp - ref_qp, L, d)
        if not len(X):
            break
        split = (m.probability(X) >= m.threshold).reshape(rows[-1] + 1, cols[-1] + 1)
        n = 8 >> d
        S = np.repeat(np.repeat(split, n, axis=0), n, axis=1)
        reg = (slice(0, S.shape[0]), slice(0, S.shape[1]))
        l, h = lo[reg], hi[reg]
        # blocks still undecided at depth d
        active = (l == d) & (h > d)
        lo[reg] = np.where(active & S, d + 1, l)
        hi[reg] = np.where(active & ~S, d, h)
    return lo, hi

"""Deterministic encode-time model from the kernel's operation counters.

Wall-clock times of identical encodes drift by tens of percent on shared
machines, which swamps the differences the schemes are judged on.  Every
encode therefore also reports operation counts per CTU; a modelled time is
their dot product with per-operation unit costs, plus a per-pixel and
per-frame overhead.  The unit costs below were fitted with calibrate() and
are fixed so that modelled times are reproducible."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UnitCosts:
    # seconds per unit of each counter, in kernel counter order
    rd_pixel: float
    direct_sad_pixel: float
    table_build_pixel: float
    table_search_position: float
    mode_eval: float
    pred_search_pixel: float
    coded_pixel: float
    # remaining work: final coding, reconstruction and driver overhead
    frame_pixel: float
    frame: float

    @property
    def counter_vector(self):
        return np.array([self.rd_pixel, self.direct_sad_pixel, self.table_build_pixel,
                         self.table_search_position, self.mode_eval, self.pred_search_pixel, self.coded_pixel])


# Fitted with fit_costs on 810 frames (three content types, three
# resolutions, three QPs, unconstrained and constrained searches, minimum of
# three encodes each); median relative error 13%.  RD pixels and coded RD
# pixels are strongly correlated and the fit is flat along their trade-off,
# so rd_pixel is pinned to keep the ratio of an uncoded to a coded RD
# evaluation near the kernel microbenchmark (about 0.3) before fitting the
# rest.  The direct-search cost, left at zero because that path is rare,
# is the microbenchmark figure.
DEFAULT_COSTS = UnitCosts(
    rd_pixel=6.38e-9, direct_sad_pixel=8.3e-10, table_build_pixel=8.47e-10,
    table_search_position=3.36e-9, mode_eval=2.89e-6, pred_search_pixel=4.83e-9, coded_pixel=1.78e-8,
    frame_pixel=3.21e-8, frame=7.13e-4,
)


def row_times(stats, width, height, costs: UnitCosts = DEFAULT_COSTS):
    """Modelled seconds per frame and CTU row, shaped like stats.row_times."""
    nx = (width + 63) // 64
    ny = (height + 63) // 64
    w = stats.work.reshape(stats.work.shape[0], ny, nx, -1).sum(axis=2) @ costs.counter_vector
    rows_px = np.array([width * (min(64, height - 64 * r)) for r in range(ny)], np.float64)
    w = w + rows_px * costs.frame_pixel
    w[:, 0] += costs.frame
    return [list(map(float, r)) for r in w]


def frame_times(stats, width, height, costs: UnitCosts = DEFAULT_COSTS):
    return [sum(r) for r in row_times(stats, width, height, costs)]


# ------------------------------------------------------------ calibration

def frame_features(stats, width, height):
    """Per-frame regressors: the counters, pixel count and a constant."""
    w = stats.work.sum(axis=1).astype(np.float64)
    n = w.shape[0]
    return np.c_[w, np.full(n, float(width * height)), np.ones(n)]


def fit_costs(features, times):
    """Non-negative least squares of measured frame times on frame_features,
    weighted by 1/time so the fit minimises relative error.  Measured times
    should be the minimum over repeated identical encodes."""
    from scipy.optimize import nnls
    X = np.asarray(features, np.float64)
    y = np.asarray(times, np.float64)
    wgt = 1.0 / y
    c, _ = nnls(X * wgt[:, None], y * wgt)
    return UnitCosts(*map(float, c))


def calibrate(jobs, repeats=3):
    """Fit unit costs from encodes on this machine.

    jobs: list of zero-argument callables, each running one encode and
    returning (EncodeResult, width, height)."""
    best = {}
    for _ in range(repeats):
        for k, job in enumerate(jobs):
            r, w, h = job()
            x = frame_features(r.stats, w, h)
            for f, t in enumerate(r.stats.frame_times):
                if (k, f) not in best or t < best[k, f][0]:
                    best[k, f] = (t, x[f])
    times = [v[0] for v in best.values()]
    return fit_costs([v[1] for v in best.values()], times)

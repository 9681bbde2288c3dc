"""Constant tables shared by the encoder and decoder kernels."""

import numpy as np

N_MODES = 11
SKIP = 0
INTER_2NX2N = 1
INTER_2NXN = 2
INTER_NX2N = 3
INTER_2NXNU = 4
INTER_2NXND = 5
INTER_NLX2N = 6
INTER_NRX2N = 7
INTER_NXN = 8
INTRA_2NX2N = 9
INTRA_NXN = 10

ALL_MODES_MASK = (1 << N_MODES) - 1

# PU rectangles in quarter-CU units: (x, y, w, h)
PU_COUNT = np.array([1, 1, 2, 2, 2, 2, 2, 2, 4, 1, 4], dtype=np.int64)
PU_GEOM = np.zeros((N_MODES, 4, 4), dtype=np.int64)
_geom = {
    0: [(0, 0, 4, 4)],
    1: [(0, 0, 4, 4)],
    2: [(0, 0, 4, 2), (0, 2, 4, 2)],
    3: [(0, 0, 2, 4), (2, 0, 2, 4)],
    4: [(0, 0, 4, 1), (0, 1, 4, 3)],
    5: [(0, 0, 4, 3), (0, 3, 4, 1)],
    6: [(0, 0, 1, 4), (1, 0, 3, 4)],
    7: [(0, 0, 3, 4), (3, 0, 1, 4)],
    8: [(0, 0, 2, 2), (2, 0, 2, 2), (0, 2, 2, 2), (2, 2, 2, 2)],
    9: [(0, 0, 4, 4)],
    10: [(0, 0, 2, 2), (2, 0, 2, 2), (0, 2, 2, 2), (2, 2, 2, 2)],
}
for _m, _rects in _geom.items():
    for _k, _r in enumerate(_rects):
        PU_GEOM[_m, _k] = _r

# first CU id of each depth inside a CTU's 85-node quadtree
DEPTH_OFFSET = np.array([0, 1, 5, 21, 85], dtype=np.int64)

# HEVC-style level scales: Qstep(QP) * 64 = LEVEL_SCALE[QP % 6] << (QP // 6)
LEVEL_SCALE = np.array([40, 45, 51, 57, 64, 72], dtype=np.int64)


def _dct_matrix(n):
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.round(64.0 * np.sqrt(2.0) * np.cos(np.pi * (2 * x + 1) * k / (2 * n)))
    m[0, :] = 64
    return m.astype(np.int64)


def _diag_scan(n):
    order = []
    for s in range(2 * n - 1):
        for y in range(min(s, n - 1), -1, -1):
            x = s - y
            if x < n:
                order.append(y * n + x)
    return np.array(order, dtype=np.int64)


DCT4 = _dct_matrix(4)
DCT8 = _dct_matrix(8)
DCT16 = _dct_matrix(16)
DCT32 = _dct_matrix(32)
DCTF4, DCTF8, DCTF16, DCTF32 = (m.astype(np.float64) for m in (DCT4, DCT8, DCT16, DCT32))
DCTFT4, DCTFT8, DCTFT16, DCTFT32 = (np.ascontiguousarray(m.T) for m in (DCTF4, DCTF8, DCTF16, DCTF32))


def _even_odd(m):
    h = m.shape[0] // 2
    te = np.ascontiguousarray(m[0::2, :h])
    to = np.ascontiguousarray(m[1::2, :h])
    return te, to, np.ascontiguousarray(te.T), np.ascontiguousarray(to.T)


# even/odd halves of each float matrix for the partial-butterfly transforms
TE4, TO4, TET4, TOT4 = _even_odd(DCTF4)
TE8, TO8, TET8, TOT8 = _even_odd(DCTF8)
TE16, TO16, TET16, TOT16 = _even_odd(DCTF16)
TE32, TO32, TET32, TOT32 = _even_odd(DCTF32)

SCAN4 = _diag_scan(4)
SCAN8 = _diag_scan(8)
SCAN16 = _diag_scan(16)
SCAN32 = _diag_scan(32)

# log2 of the forward-transform gain (4096 * N)
FWD_SHIFT = {4: 14, 8: 15, 16: 16, 32: 17}

MAGIC_TVC = b"TVC1"
TVC_VERSION = 1

# column layout of the per-leaf record matrix produced by the frame kernel
L_CTU, L_X, L_Y, L_DEPTH, L_MODE, L_MERGE, L_CBF = range(7)
L_MV = 7        # 8 columns: (mvx, mvy) per PU
L_REF = 15      # 4 columns
L_DIR = 19      # 4 columns
L_NCOLS = 23

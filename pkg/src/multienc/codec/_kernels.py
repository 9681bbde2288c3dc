"""Compiled inner loops of the toy codec.

Everything here works on int32 sample planes and plain integer arrays so the
encoder and decoder share bit-exact arithmetic.  Rate-distortion costs are
int64 fixed point with 8 fractional bits: ``J = SSE * 256 + lambda_fix * bits``.

Prediction neighbours are taken from outside the current CTU only (the left
CTU's last column / the above CTU's last row), so every CU of a CTU can be
evaluated independently of its siblings and the quadtree search is an exact
dynamic programme.
"""

import numpy as np
from numba import njit

from ._tables import (
    TE4, TO4, TET4, TOT4, TE8, TO8, TET8, TOT8,
    TE16, TO16, TET16, TOT16, TE32, TO32, TET32, TOT32,
    SCAN4, SCAN8, SCAN16, SCAN32,
    PU_COUNT, PU_GEOM, DEPTH_OFFSET,
    L_CTU, L_X, L_Y, L_DEPTH, L_MODE, L_MERGE, L_CBF, L_MV, L_REF, L_DIR,
)

INF = np.int64(1) << 62
# operation counters per CTU: RD transform pixels, direct-search SAD pixels,
# SAD-table build pixels, table-search positions, RD mode evaluations,
# prediction-search pixels (merge candidates and intra directions), RD
# pixels of evaluations with coded coefficients
N_WORK = 7
BIG_SAD = 1 << 28


# ---------------------------------------------------------------- bit I/O

@njit(cache=True)
def ue_len(v):
    n = 0
    t = v + 1
    while t > 1:
        t >>= 1
        n += 1
    return 2 * n + 1


@njit(cache=True)
def se_len(v):
    if v > 0:
        return ue_len(2 * v - 1)
    return ue_len(-2 * v)


@njit(cache=True)
def put_bits(buf, st, value, n):
    pos = st[0]
    for i in range(n - 1, -1, -1):
        if (value >> i) & 1:
            buf[pos >> 3] |= np.uint8(0x80 >> (pos & 7))
        pos += 1
    st[0] = pos


@njit(cache=True)
def put_ue(buf, st, v):
    t = v + 1
    n = 0
    while (t >> (n + 1)) > 0:
        n += 1
    put_bits(buf, st, 0, n)
    put_bits(buf, st, t, n + 1)


@njit(cache=True)
def put_se(buf, st, v):
    if v > 0:
        put_ue(buf, st, 2 * v - 1)
    else:
        put_ue(buf, st, -2 * v)


@njit(cache=True)
def get_bits(buf, st, n):
    # st[0] = bit position, st[1] = error flag
    pos = st[0]
    if pos + n > buf.shape[0] * 8:
        st[1] = 1
        st[0] = buf.shape[0] * 8
        return 0
    v = 0
    for _ in range(n):
        v = (v << 1) | ((buf[pos >> 3] >> (7 - (pos & 7))) & 1)
        pos += 1
    st[0] = pos
    return v


@njit(cache=True)
def get_ue(buf, st):
    n = 0
    while get_bits(buf, st, 1) == 0:
        if st[1] != 0 or n > 32:
            st[1] = 1
            return 0
        n += 1
    rest = get_bits(buf, st, n)
    return ((1 << n) | rest) - 1


@njit(cache=True)
def get_se(buf, st):
    k = get_ue(buf, st)
    if k & 1:
        return (k + 1) >> 1
    return -(k >> 1)


# ------------------------------------------------------- transform / quant

@njit(cache=True)
def _mat(n):
    if n == 4:
        return TE4, TO4, TET4, TOT4
    if n == 8:
        return TE8, TO8, TET8, TOT8
    if n == 16:
        return TE16, TO16, TET16, TOT16
    return TE32, TO32, TET32, TOT32


@njit(cache=True)
def _scan(n):
    if n == 4:
        return SCAN4
    if n == 8:
        return SCAN8
    if n == 16:
        return SCAN16
    return SCAN32


@njit(cache=True)
def _fshift(n):
    if n == 4:
        return 14
    if n == 8:
        return 15
    if n == 16:
        return 16
    return 17


@njit(cache=True)
def qstep64(qp):
    scales = (40, 45, 51, 57, 64, 72)
    return np.int64(scales[qp % 6]) << (qp // 6)


# The integer transforms are evaluated in float64: every operand and partial
# sum is an integer below 2**53, so the arithmetic is exact in any summation
# order (which is what makes fastmath reassociation safe here) and vectorises.

@njit(cache=True, fastmath=True)
def forward_quant(res, n, q64, tmp, lev):
    """Integer DCT of res[:n,:n] followed by dead-zone quantisation into lev.

    level = floor(|c| / Qstep + 1/3).  Returns the number of non-zero levels.
    Even/odd (partial butterfly) evaluation of the matrix products.
    """
    TE, TO, TET, TOT = _mat(n)
    sh = _fshift(n)
    h = n >> 1
    a1 = np.empty((n, n), np.float64)
    eo = np.empty((n, n), np.float64)
    # vertical pass: eo rows [0, h) even sums, [h, n) odd differences
    for y in range(h):
        for x in range(n):
            p = res[y, x]
            q = res[n - 1 - y, x]
            eo[y, x] = p + q
            eo[h + y, x] = p - q
    for k in range(h):
        for x in range(n):
            a1[2 * k, x] = 0.0
            a1[2 * k + 1, x] = 0.0
        for y in range(h):
            te = TE[k, y]
            to = TO[k, y]
            for x in range(n):
                a1[2 * k, x] += te * eo[y, x]
                a1[2 * k + 1, x] += to * eo[h + y, x]
    lim = (3 * q64) << sh
    off = q64 << sh
    rinv = 1.0 / np.float64(lim)
    ev = np.empty(16, np.float64)
    od = np.empty(16, np.float64)
    e = np.empty(16, np.float64)
    o = np.empty(16, np.float64)
    nnz = 0
    for k in range(n):
        for x in range(h):
            p = a1[k, x]
            q = a1[k, n - 1 - x]
            e[x] = p + q
            o[x] = p - q
        for l in range(h):
            ev[l] = 0.0
            od[l] = 0.0
        for x in range(h):
            ex = e[x]
            ox = o[x]
            for l in range(h):
                ev[l] += ex * TET[x, l]
                od[l] += ox * TOT[x, l]
        for l in range(n):
            c = np.int64(ev[l >> 1] if (l & 1) == 0 else od[l >> 1])
            a = c if c >= 0 else -c
            num = 192 * a + off
            if num < lim:
                lev[k, l] = 0
            else:
                # reciprocal estimate, then exact integer correction
                v = np.int64(np.float64(num) * rinv)
                while v * lim > num:
                    v -= 1
                while (v + 1) * lim <= num:
                    v += 1
                nnz += 1
                lev[k, l] = v if c >= 0 else -v
    return nnz


@njit(cache=True, fastmath=True)
def dequant_inverse(lev, n, q64, nnz, tmp, out):
    """Dequantise lev and inverse-transform into out[:n,:n] (residual samples)."""
    TE, TO, TET, TOT = _mat(n)
    sh = _fshift(n) + 6
    half = np.int64(1) << (sh - 1)
    h = n >> 1
    a1 = np.empty((n, n), np.float64)
    cd = np.empty((n, n), np.float64)
    qf = np.float64(q64)
    rowsnz = np.zeros(32, np.bool_)
    for k in range(n):
        for l in range(n):
            c = lev[k, l]
            cd[k, l] = np.float64(c) * qf
            if c != 0:
                rowsnz[k] = True
    # a1[y, l] = sum_k T[k, y] cd[k, l], rows y and n-1-y from even/odd sums
    ev = np.empty(32, np.float64)
    od = np.empty(32, np.float64)
    for y in range(h):
        for l in range(n):
            ev[l] = 0.0
            od[l] = 0.0
        for k in range(h):
            if rowsnz[2 * k]:
                t = TE[k, y]
                for l in range(n):
                    ev[l] += t * cd[2 * k, l]
            if rowsnz[2 * k + 1]:
                t = TO[k, y]
                for l in range(n):
                    od[l] += t * cd[2 * k + 1, l]
        for l in range(n):
            a1[y, l] = ev[l] + od[l]
            a1[n - 1 - y, l] = ev[l] - od[l]
    # out[y, x] = sum_l a1[y, l] T[l, x]
    for y in range(n):
        for x in range(h):
            ev[x] = 0.0
            od[x] = 0.0
        for k in range(h):
            te = a1[y, 2 * k]
            to = a1[y, 2 * k + 1]
            for x in range(h):
                ev[x] += te * TE[k, x]
                od[x] += to * TO[k, x]
        for x in range(h):
            out[y, x] = (np.int64(ev[x] + od[x]) + half) >> sh
            out[y, n - 1 - x] = (np.int64(ev[x] - od[x]) + half) >> sh


@njit(cache=True)
def coeff_bits(lev, n, nnz):
    if nnz == 0:
        return 0
    sc = _scan(n)
    bits = ue_len(nnz - 1)
    run = 0
    left = nnz
    for i in range(n * n):
        p = sc[i]
        v = lev[p // n, p % n]
        if v == 0:
            run += 1
        else:
            a = v if v > 0 else -v
            bits += ue_len(run) + ue_len(a - 1) + 1
            run = 0
            left -= 1
            if left == 0:
                break
    return bits


@njit(cache=True)
def put_coeffs(buf, st, lev, n, nnz):
    sc = _scan(n)
    put_ue(buf, st, nnz - 1)
    run = 0
    left = nnz
    for i in range(n * n):
        p = sc[i]
        v = lev[p // n, p % n]
        if v == 0:
            run += 1
        else:
            a = v if v > 0 else -v
            put_ue(buf, st, run)
            put_ue(buf, st, a - 1)
            put_bits(buf, st, 1 if v < 0 else 0, 1)
            run = 0
            left -= 1
            if left == 0:
                break


@njit(cache=True)
def get_coeffs(buf, st, lev, n):
    sc = _scan(n)
    for y in range(n):
        for x in range(n):
            lev[y, x] = 0
    nnz = get_ue(buf, st) + 1
    i = 0
    for _ in range(nnz):
        run = get_ue(buf, st)
        a = get_ue(buf, st) + 1
        sg = get_bits(buf, st, 1)
        i += run
        if i >= n * n or st[1] != 0:
            st[1] = 1
            return nnz
        p = sc[i]
        lev[p // n, p % n] = -a if sg else a
        i += 1
    return nnz


# ----------------------------------------------------------- prediction

@njit(cache=True)
def intra_predict(rec, W, H, cx, cy, px, py, pw, ph, mode, pred, ox, oy):
    """Write an intra prediction for the pw x ph block at (px, py) into
    pred[oy:oy+ph, ox:ox+pw].  References are the reconstructed row above and
    column left of the CTU whose origin is (cx, cy).
    mode: 0 DC, 1 planar, 2 horizontal, 3 vertical."""
    has_top = cy > 0
    has_left = cx > 0
    dc = 128
    n = 0
    acc = 0
    if has_top:
        for i in range(pw):
            acc += rec[cy - 1, px + i]
        n += pw
    if has_left:
        for j in range(ph):
            acc += rec[py + j, cx - 1]
        n += ph
    if n > 0:
        dc = (acc + n // 2) // n
    if mode == 1 and has_top and has_left:
        tr = rec[cy - 1, px + pw - 1]
        bl = rec[py + ph - 1, cx - 1]
        den = 2 * pw * ph
        for j in range(ph):
            lj = rec[py + j, cx - 1]
            for i in range(pw):
                ti = rec[cy - 1, px + i]
                v = ((pw - 1 - i) * lj + (i + 1) * tr) * ph + ((ph - 1 - j) * ti + (j + 1) * bl) * pw
                pred[oy + j, ox + i] = (v + pw * ph) // den
    elif mode == 2 and has_left:
        for j in range(ph):
            lj = rec[py + j, cx - 1]
            for i in range(pw):
                pred[oy + j, ox + i] = lj
    elif mode == 3 and has_top:
        for j in range(ph):
            for i in range(pw):
                pred[oy + j, ox + i] = rec[cy - 1, px + i]
    else:
        for j in range(ph):
            for i in range(pw):
                pred[oy + j, ox + i] = dc


@njit(cache=True)
def inter_predict(ref, px, py, pw, ph, mx, my, pred, ox, oy):
    for j in range(ph):
        for i in range(pw):
            pred[oy + j, ox + i] = ref[py + my + j, px + mx + i]


@njit(cache=True)
def neighbours(mf_mv, mf_ref, x, y, cx, cy, cand_mv, cand_ref):
    """Merge candidates (left, above, zero) and the AMVP predictor of a CU.

    Returns (mvp_x, mvp_y)."""
    left = cx > 0 and mf_ref[y >> 2, (cx - 1) >> 2] >= 0
    above = cy > 0 and mf_ref[(cy - 1) >> 2, x >> 2] >= 0
    for k in range(3):
        cand_mv[k, 0] = 0
        cand_mv[k, 1] = 0
        cand_ref[k] = 0
    if left:
        cand_mv[0, 0] = mf_mv[y >> 2, (cx - 1) >> 2, 0]
        cand_mv[0, 1] = mf_mv[y >> 2, (cx - 1) >> 2, 1]
        cand_ref[0] = mf_ref[y >> 2, (cx - 1) >> 2]
    if above:
        cand_mv[1, 0] = mf_mv[(cy - 1) >> 2, x >> 2, 0]
        cand_mv[1, 1] = mf_mv[(cy - 1) >> 2, x >> 2, 1]
        cand_ref[1] = mf_ref[(cy - 1) >> 2, x >> 2]
    if left:
        return cand_mv[0, 0], cand_mv[0, 1]
    if above:
        return cand_mv[1, 0], cand_mv[1, 1]
    return 0, 0


@njit(cache=True)
def block_inside(px, py, pw, ph, W, H):
    return px >= 0 and py >= 0 and px + pw <= W and py + ph <= H


# ---------------------------------------------------------- motion search

@njit(cache=True)
def search_direct(orig, refs, r_lo, r_hi, px, py, pw, ph, cxm, cym, rng,
                  mvpx, mvpy, lamm, refbits, W, H, out):
    """Exhaustive integer-pel search of the PU (px, py, pw, ph) over refs
    [r_lo, r_hi) in the window of radius rng around (cxm, cym).

    Cost = SAD * 256 + lamm * (mvd bits + ref bits); first minimum in
    (ref, row, column) raster order wins.  Writes (mx, my, ref) to out and
    returns the cost."""
    best = INF
    bmx = 0
    bmy = 0
    br = r_lo
    for r in range(r_lo, r_hi):
        ref = refs[r]
        for my in range(cym - rng, cym + rng + 1):
            if py + my < 0 or py + my + ph > H:
                continue
            by = se_len(my - mvpy)
            for mx in range(cxm - rng, cxm + rng + 1):
                if px + mx < 0 or px + mx + pw > W:
                    continue
                sad = 0
                for j in range(ph):
                    oy = py + j
                    ry = oy + my
                    for i in range(pw):
                        dv = orig[oy, px + i] - ref[ry, px + mx + i]
                        sad += dv if dv >= 0 else -dv
                c = np.int64(sad) * 256 + lamm * (se_len(mx - mvpx) + by + refbits)
                if c < best:
                    best = c
                    bmx = mx
                    bmy = my
                    br = r
    if best == INF:
        # empty window: fall back to the zero vector on the first reference
        ref = refs[r_lo]
        sad = 0
        for j in range(ph):
            for i in range(pw):
                dv = orig[py + j, px + i] - ref[py + j, px + i]
                sad += dv if dv >= 0 else -dv
        best = np.int64(sad) * 256 + lamm * (se_len(-mvpx) + se_len(-mvpy) + refbits)
        bmx = 0
        bmy = 0
        br = r_lo
    out[0] = bmx
    out[1] = bmy
    out[2] = br
    return best


@njit(cache=True)
def build_sad_integral(orig, refs, nref, gx0, gy0, ngx, ngy, ux0, uy0, uw, uh, W, H, tab, rowbuf):
    """Integral images of 4x4 block SADs over a grid of ngx x ngy blocks at
    (gx0, gy0), one per displacement (ux0 + i, uy0 + j) of the window.

    tab[r, j * uw + i, b, a] holds the SAD of the blocks [0, a) x [0, b).
    Blocks displaced outside the frame are stored as 0; the searches never
    sum them because they only visit displacements keeping the PU inside."""
    blk = np.zeros(16, np.int64)
    npx = 4 * ngx
    for r in range(nref):
        ref = refs[r]
        for j in range(uh):
            my = uy0 + j
            for i in range(uw):
                mx = ux0 + i
                p = j * uw + i
                full = block_inside(gx0 + mx, gy0 + my, npx, 4 * ngy, W, H)
                for a in range(ngx + 1):
                    tab[r, p, 0, a] = 0
                for gy in range(ngy):
                    for gx in range(ngx):
                        blk[gx] = 0
                    if full:
                        for yy in range(4):
                            oy = gy0 + 4 * gy + yy
                            ry = oy + my
                            for xx in range(npx):
                                dv = orig[oy, gx0 + xx] - ref[ry, gx0 + mx + xx]
                                rowbuf[xx] = dv if dv >= 0 else -dv
                            for gx in range(ngx):
                                blk[gx] += rowbuf[4 * gx] + rowbuf[4 * gx + 1] + rowbuf[4 * gx + 2] + rowbuf[4 * gx + 3]
                    else:
                        byy = gy0 + 4 * gy
                        for gx in range(ngx):
                            bx = gx0 + 4 * gx
                            if block_inside(bx + mx, byy + my, 4, 4, W, H):
                                acc = 0
                                for yy in range(4):
                                    for k in range(4):
                                        dv = orig[byy + yy, bx + k] - ref[byy + yy + my, bx + mx + k]
                                        acc += dv if dv >= 0 else -dv
                                blk[gx] = acc
                    run = 0
                    tab[r, p, gy + 1, 0] = 0
                    for gx in range(ngx):
                        run += blk[gx]
                        tab[r, p, gy + 1, gx + 1] = tab[r, p, gy, gx + 1] + run


@njit(cache=True)
def search_integral(tab, ux0, uy0, uw, gx0, gy0, r_lo, r_hi, px, py, pw, ph, cxm, cym, rng,
                    mvpx, mvpy, lamm, refbits, W, H, out):
    """Same search as search_direct, reading SADs from integral tables.

    The window [cxm - rng, cxm + rng]^2 must lie inside the table's window."""
    a0 = (px - gx0) >> 2
    b0 = (py - gy0) >> 2
    a1 = a0 + (pw >> 2)
    b1 = b0 + (ph >> 2)
    best = INF
    bmx = 0
    bmy = 0
    br = r_lo
    for r in range(r_lo, r_hi):
        for my in range(cym - rng, cym + rng + 1):
            if py + my < 0 or py + my + ph > H:
                continue
            by = se_len(my - mvpy)
            row = (my - uy0) * uw - ux0
            for mx in range(cxm - rng, cxm + rng + 1):
                if px + mx < 0 or px + mx + pw > W:
                    continue
                p = row + mx
                sad = tab[r, p, b1, a1] - tab[r, p, b0, a1] - tab[r, p, b1, a0] + tab[r, p, b0, a0]
                c = sad * 256 + lamm * (se_len(mx - mvpx) + by + refbits)
                if c < best:
                    best = c
                    bmx = mx
                    bmy = my
                    br = r
    out[0] = bmx
    out[1] = bmy
    out[2] = br
    return best


# ------------------------------------------------------------- RD helpers

@njit(cache=True)
def luma_rd(orig, x, y, s, pred, q64, res, tmp, lev, rbuf):
    """SSE of the reconstruction and luma coefficient bits of a CU."""
    t = s if s < 32 else 32
    sse = np.int64(0)
    bits = 0
    for ty in range(0, s, t):
        for tx in range(0, s, t):
            for j in range(t):
                for i in range(t):
                    res[j, i] = orig[y + ty + j, x + tx + i] - pred[ty + j, tx + i]
            nnz = forward_quant(res, t, q64, tmp, lev)
            if nnz == 0:
                for j in range(t):
                    for i in range(t):
                        d = np.int64(res[j, i])
                        sse += d * d
            else:
                bits += coeff_bits(lev, t, nnz)
                dequant_inverse(lev, t, q64, nnz, tmp, rbuf)
                for j in range(t):
                    for i in range(t):
                        v = pred[ty + j, tx + i] + rbuf[j, i]
                        if v < 0:
                            v = 0
                        elif v > 255:
                            v = 255
                        d = orig[y + ty + j, x + tx + i] - v
                        sse += d * d
    return sse, bits


@njit(cache=True)
def pred_sse(orig, x, y, s, pred):
    sse = np.int64(0)
    for j in range(s):
        for i in range(s):
            d = orig[y + j, x + i] - pred[j, i]
            sse += d * d
    return sse


@njit(cache=True)
def pred_sad(orig, px, py, pw, ph, pred, ox, oy):
    sad = 0
    for j in range(ph):
        for i in range(pw):
            d = orig[py + j, px + i] - pred[oy + j, ox + i]
            sad += d if d >= 0 else -d
    return sad


@njit(cache=True)
def structural_modes(depth, s, is_intra):
    if is_intra:
        m = (1 << 9) | (1 << 10)
    else:
        m = (1 << 11) - 1
    if depth != 3:
        m &= ~((1 << 8) | (1 << 10))
    if s < 16:
        m &= ~((1 << 4) | (1 << 5) | (1 << 6) | (1 << 7))
    return m


# ------------------------------------------------------------- leaf RDO

@njit(cache=True)
def eval_leaf(orig, rec, refs, nref, W, H, cx, cy, x, y, s, d, cid,
              mf_mv, mf_ref, q64, lam, lamm, rng, is_intra,
              mode_mask, me_mode, me_ref, me_range, me_mvp, me_set,
              pred, tab, tinfo, rowbuf, res, tmp, lev, rbuf,
              cu_mode, cu_merge, cu_cbf, cu_mv, cu_ref, cu_dir, work):
    """Best mode of one CU among those permitted.  Returns the leaf RD cost.

    work accumulates operation counts (see WORK_* in the tables)."""
    sflag = 1 if d < 3 else 0
    t = s if s < 32 else 32
    ntu = (s // t) * (s // t)
    refbits = 1 if nref > 1 else 0
    bx8 = x >> 3
    by8 = y >> 3
    allowed = structural_modes(d, s, is_intra)
    am = mode_mask[d, by8, bx8] & allowed
    if am == 0:
        am = allowed
    cm = me_mode[d, by8, bx8]

    cand_mv = np.zeros((3, 2), np.int64)
    cand_ref = np.zeros(3, np.int64)
    mvpx = 0
    mvpy = 0
    if not is_intra:
        mvpx, mvpy = neighbours(mf_mv, mf_ref, x, y, cx, cy, cand_mv, cand_ref)

    best = INF
    tab_ready = tinfo[0] == 2
    pu_mv = np.zeros((4, 2), np.int64)
    pu_ref = np.zeros(4, np.int64)
    pu_dir = np.zeros(4, np.int64)
    sres = np.zeros(3, np.int64)

    for m in range(11):
        if not (am >> m) & 1:
            continue
        npu = PU_COUNT[m]
        if m == 0:
            minbits = sflag + 7
        elif m <= 8:
            minbits = sflag + 4 + npu * (refbits + 2) + 3 * ntu
        else:
            minbits = sflag + 4 + 2 * npu + 3 * ntu
        if lam * minbits >= best:
            continue

        if m == 0:
            bidx = -1
            bsad = 1 << 40
            for k in range(3):
                if cand_ref[k] >= nref:
                    continue
                if not block_inside(x + cand_mv[k, 0], y + cand_mv[k, 1], s, s, W, H):
                    continue
                inter_predict(refs[cand_ref[k]], x, y, s, s, cand_mv[k, 0], cand_mv[k, 1], pred, 0, 0)
                sd = pred_sad(orig, x, y, s, s, pred, 0, 0)
                work[5] += s * s
                if sd < bsad:
                    bsad = sd
                    bidx = k
            if bidx < 0:
                continue
            k = bidx
            inter_predict(refs[cand_ref[k]], x, y, s, s, cand_mv[k, 0], cand_mv[k, 1], pred, 0, 0)
            j_skip = pred_sse(orig, x, y, s, pred) * 256 + lam * (sflag + 7)
            sse, cb = luma_rd(orig, x, y, s, pred, q64, res, tmp, lev, rbuf)
            work[0] += s * s
            work[4] += 1
            if cb > 0:
                work[6] += s * s
            j_res = sse * 256 + lam * (sflag + 7 + 3 * ntu + cb)
            jm = j_skip
            cbf = 0
            if j_res < j_skip:
                jm = j_res
                cbf = 1
            if jm < best:
                best = jm
                cu_mode[cid] = 0
                cu_merge[cid] = k
                cu_cbf[cid] = cbf
                cu_mv[cid, 0, 0] = cand_mv[k, 0]
                cu_mv[cid, 0, 1] = cand_mv[k, 1]
                cu_ref[cid, 0] = cand_ref[k]
                for q in range(1, 4):
                    cu_mv[cid, q, 0] = 0
                    cu_mv[cid, q, 1] = 0
                    cu_ref[cid, q] = 0
                for q in range(4):
                    cu_dir[cid, q] = -1
        elif m <= 8:
            side_bits = 0
            constrained = m == cm or cm == 15
            for k in range(npu):
                px = x + PU_GEOM[m, k, 0] * s // 4
                py = y + PU_GEOM[m, k, 1] * s // 4
                pw = PU_GEOM[m, k, 2] * s // 4
                ph = PU_GEOM[m, k, 3] * s // 4
                if constrained:
                    gy4 = py >> 2
                    gx4 = px >> 2
                    r_lo = 0
                    r_hi = nref
                    fr = me_ref[d, gy4, gx4]
                    if fr >= 0 and fr < nref:
                        r_lo = fr
                        r_hi = fr + 1
                    rr = me_range[d, gy4, gx4]
                    if rr < 0 or rr > rng:
                        rr = rng
                    ccx = mvpx
                    ccy = mvpy
                    if me_set[d, gy4, gx4]:
                        ccx = me_mvp[d, gy4, gx4, 0]
                        ccy = me_mvp[d, gy4, gx4, 1]
                    search_direct(orig, refs, r_lo, r_hi, px, py, pw, ph, ccx, ccy, rr,
                                  mvpx, mvpy, lamm, refbits, W, H, sres)
                    work[1] += (r_hi - r_lo) * (2 * rr + 1) * (2 * rr + 1) * pw * ph
                else:
                    if not tab_ready:
                        if tinfo[0] == 0:
                            tinfo[1] = mvpx - rng
                            tinfo[2] = mvpy - rng
                            tinfo[3] = 2 * rng + 1
                            tinfo[4] = 2 * rng + 1
                            tinfo[5] = x
                            tinfo[6] = y
                            build_sad_integral(orig, refs, nref, x, y, s >> 2, s >> 2,
                                               tinfo[1], tinfo[2], tinfo[3], tinfo[4], W, H, tab, rowbuf)
                            work[2] += nref * tinfo[3] * tinfo[4] * s * s
                        elif tinfo[0] == 1:
                            build_sad_integral(orig, refs, nref, tinfo[5], tinfo[6], tinfo[7], tinfo[8],
                                               tinfo[1], tinfo[2], tinfo[3], tinfo[4], W, H, tab, rowbuf)
                            work[2] += nref * tinfo[3] * tinfo[4] * tinfo[7] * tinfo[8] * 16
                            tinfo[0] = 2
                        tab_ready = True
                    search_integral(tab, tinfo[1], tinfo[2], tinfo[3], tinfo[5], tinfo[6], 0, nref,
                                    px, py, pw, ph, mvpx, mvpy, rng, mvpx, mvpy, lamm, refbits, W, H, sres)
                    work[3] += nref * (2 * rng + 1) * (2 * rng + 1)
                pu_mv[k, 0] = sres[0]
                pu_mv[k, 1] = sres[1]
                pu_ref[k] = sres[2]
                side_bits += refbits + se_len(sres[0] - mvpx) + se_len(sres[1] - mvpy)
                inter_predict(refs[sres[2]], px, py, pw, ph, sres[0], sres[1], pred, px - x, py - y)
            if lam * (sflag + 4 + side_bits + 3 * ntu) >= best:
                continue
            sse, cb = luma_rd(orig, x, y, s, pred, q64, res, tmp, lev, rbuf)
            work[0] += s * s
            work[4] += 1
            if cb > 0:
                work[6] += s * s
            jm = sse * 256 + lam * (sflag + 4 + side_bits + 3 * ntu + cb)
            if jm < best:
                best = jm
                cu_mode[cid] = m
                cu_merge[cid] = -1
                cu_cbf[cid] = 1
                for q in range(4):
                    if q < npu:
                        cu_mv[cid, q, 0] = pu_mv[q, 0]
                        cu_mv[cid, q, 1] = pu_mv[q, 1]
                        cu_ref[cid, q] = pu_ref[q]
                    else:
                        cu_mv[cid, q, 0] = 0
                        cu_mv[cid, q, 1] = 0
                        cu_ref[cid, q] = 0
                    cu_dir[cid, q] = -1
        else:
            for k in range(npu):
                px = x + PU_GEOM[m, k, 0] * s // 4
                py = y + PU_GEOM[m, k, 1] * s // 4
                pw = PU_GEOM[m, k, 2] * s // 4
                ph = PU_GEOM[m, k, 3] * s // 4
                bdir = 0
                bsad = 1 << 40
                for dr in range(4):
                    intra_predict(rec, W, H, cx, cy, px, py, pw, ph, dr, pred, px - x, py - y)
                    sd = pred_sad(orig, px, py, pw, ph, pred, px - x, py - y)
                    if sd < bsad:
                        bsad = sd
                        bdir = dr
                pu_dir[k] = bdir
                work[5] += 4 * pw * ph
                intra_predict(rec, W, H, cx, cy, px, py, pw, ph, bdir, pred, px - x, py - y)
            sse, cb = luma_rd(orig, x, y, s, pred, q64, res, tmp, lev, rbuf)
            work[0] += s * s
            work[4] += 1
            if cb > 0:
                work[6] += s * s
            jm = sse * 256 + lam * (sflag + 4 + 2 * npu + 3 * ntu + cb)
            if jm < best:
                best = jm
                cu_mode[cid] = m
                cu_merge[cid] = -1
                cu_cbf[cid] = 1
                for q in range(4):
                    cu_mv[cid, q, 0] = 0
                    cu_mv[cid, q, 1] = 0
                    cu_ref[cid, q] = -1
                    cu_dir[cid, q] = pu_dir[q] if q < npu else -1
    return best


# ---------------------------------------------------------- CTU quadtree

@njit(cache=True)
def cu_flags(lo8, hi8, x, y, s, d, W, H):
    """(inside, leaf_ok, split_ok) of a CU under the per-8x8 depth bounds."""
    inside = x + s <= W and y + s <= H
    x1 = min(x + s, W) >> 3
    y1 = min(y + s, H) >> 3
    lo_max = 0
    hi_max = 0
    hi_min = 3
    for by in range(y >> 3, y1):
        for bx in range(x >> 3, x1):
            lo_max = max(lo_max, lo8[by, bx])
            hi_max = max(hi_max, hi8[by, bx])
            hi_min = min(hi_min, hi8[by, bx])
    leaf_ok = inside and d >= lo_max and d <= hi_min
    split_ok = d < 3 and ((not inside) or d < hi_max)
    return inside, leaf_ok, split_ok


@njit(cache=True)
def cu_id(d, lx, ly):
    s = 64 >> d
    return DEPTH_OFFSET[d] + (ly // s) * (1 << d) + (lx // s)


@njit(cache=True)
def rdo_ctu(orig, rec, refs, nref, W, H, cx, cy, mf_mv, mf_ref, q64, lam, lamm, rng,
            is_intra, lo8, hi8, mode_mask, me_mode, me_ref, me_range, me_mvp, me_set,
            pred, tab, tinfo, rowbuf, res, tmp, lev, rbuf,
            cu_mode, cu_merge, cu_cbf, cu_mv, cu_ref, cu_dir, cu_leaf, cu_split, cu_cost,
            visits, fallback, work):
    """Depth-first quadtree RDO of the CTU at (cx, cy).

    visits[d] counts leaf evaluations per depth; fallback[0] counts CUs where
    the bounds admitted neither a leaf nor a split (should stay 0)."""
    for i in range(85):
        cu_split[i] = False
        cu_cost[i] = INF
        cu_leaf[i] = INF
    # shared SAD window: the union of every CU's search window in this CTU,
    # used when it is not much larger than a single CU window
    tinfo[0] = 0
    if not is_intra:
        cand_mv = np.zeros((3, 2), np.int64)
        cand_ref = np.zeros(3, np.int64)
        lx = 1 << 30
        ly = 1 << 30
        hx = -(1 << 30)
        hy = -(1 << 30)
        for d in range(4):
            s = 64 >> d
            for yy in range(cy, min(cy + 64, H), s):
                for xx in range(cx, min(cx + 64, W), s):
                    px, py = neighbours(mf_mv, mf_ref, xx, yy, cx, cy, cand_mv, cand_ref)
                    lx = min(lx, px)
                    ly = min(ly, py)
                    hx = max(hx, px)
                    hy = max(hy, py)
        uw = hx - lx + 2 * rng + 1
        uh = hy - ly + 2 * rng + 1
        if uw * uh <= tab.shape[1]:
            tinfo[0] = 1
            tinfo[1] = lx - rng
            tinfo[2] = ly - rng
            tinfo[3] = uw
            tinfo[4] = uh
            tinfo[5] = cx
            tinfo[6] = cy
            tinfo[7] = (min(cx + 64, W) - cx) >> 2
            tinfo[8] = (min(cy + 64, H) - cy) >> 2
    # explicit post-order traversal; stack entries (d, x, y, state)
    stack = np.zeros((16, 4), np.int64)
    acc = np.zeros(4, np.int64)
    sp = 0
    stack[0, 0] = 0
    stack[0, 1] = cx
    stack[0, 2] = cy
    stack[0, 3] = 0
    sp = 1
    while sp > 0:
        d = stack[sp - 1, 0]
        x = stack[sp - 1, 1]
        y = stack[sp - 1, 2]
        state = stack[sp - 1, 3]
        s = 64 >> d
        cid = cu_id(d, x - cx, y - cy)
        if state == 0:
            inside, leaf_ok, split_ok = cu_flags(lo8, hi8, x, y, s, d, W, H)
            if inside and not leaf_ok and not split_ok:
                leaf_ok = True
                fallback[0] += 1
            jl = INF
            if leaf_ok:
                visits[d] += 1
                jl = eval_leaf(orig, rec, refs, nref, W, H, cx, cy, x, y, s, d, cid,
                               mf_mv, mf_ref, q64, lam, lamm, rng, is_intra,
                               mode_mask, me_mode, me_ref, me_range, me_mvp, me_set,
                               pred, tab, tinfo, rowbuf, res, tmp, lev, rbuf,
                               cu_mode, cu_merge, cu_cbf, cu_mv, cu_ref, cu_dir, work)
            cu_leaf[cid] = jl
            if split_ok and leaf_ok and jl <= lam * 29:
                # even four minimal children plus the flag cannot beat this leaf
                split_ok = False
            if not split_ok:
                cu_split[cid] = False
                cu_cost[cid] = jl
                sp -= 1
                continue
            acc[d] = lam if inside else 0
            stack[sp - 1, 3] = 1
        elif state <= 4:
            k = state - 1
            h = s >> 1
            chx = x + (k & 1) * h
            chy = y + (k >> 1) * h
            stack[sp - 1, 3] = state + 1
            if chx < W and chy < H:
                stack[sp, 0] = d + 1
                stack[sp, 1] = chx
                stack[sp, 2] = chy
                stack[sp, 3] = 0
                sp += 1
            continue
        else:
            h = s >> 1
            total = acc[d]
            for k in range(4):
                chx = x + (k & 1) * h
                chy = y + (k >> 1) * h
                if chx < W and chy < H:
                    total += cu_cost[cu_id(d + 1, chx - cx, chy - cy)]
            jl = cu_leaf[cid]
            if jl <= total:
                cu_split[cid] = False
                cu_cost[cid] = jl
            else:
                cu_split[cid] = True
                cu_cost[cid] = total
            sp -= 1
    return cu_cost[0]


# ----------------------------------------------------- leaf reconstruction

@njit(cache=True)
def predict_leaf(mode, x, y, s, cx, cy, mvs, refs_idx, dirs,
                 rec_y, rec_u, rec_v, ry, ru, rv, W, H, py_, pu_, pv_):
    """Luma and chroma prediction of a decided leaf."""
    npu = PU_COUNT[mode]
    for k in range(npu):
        px = x + PU_GEOM[mode, k, 0] * s // 4
        py = y + PU_GEOM[mode, k, 1] * s // 4
        pw = PU_GEOM[mode, k, 2] * s // 4
        ph = PU_GEOM[mode, k, 3] * s // 4
        if mode <= 8:
            mx = mvs[k, 0]
            my = mvs[k, 1]
            r = refs_idx[k]
            inter_predict(ry[r], px, py, pw, ph, mx, my, py_, px - x, py - y)
            cmx = mx >> 1
            cmy = my >> 1
            inter_predict(ru[r], px >> 1, py >> 1, pw >> 1, ph >> 1, cmx, cmy, pu_, (px - x) >> 1, (py - y) >> 1)
            inter_predict(rv[r], px >> 1, py >> 1, pw >> 1, ph >> 1, cmx, cmy, pv_, (px - x) >> 1, (py - y) >> 1)
        else:
            intra_predict(rec_y, W, H, cx, cy, px, py, pw, ph, dirs[k], py_, px - x, py - y)
    if mode > 8:
        c = s >> 1
        intra_predict(rec_u, W >> 1, H >> 1, cx >> 1, cy >> 1, x >> 1, y >> 1, c, c, dirs[0], pu_, 0, 0)
        intra_predict(rec_v, W >> 1, H >> 1, cx >> 1, cy >> 1, x >> 1, y >> 1, c, c, dirs[0], pv_, 0, 0)


@njit(cache=True)
def add_residual(rec, ox, oy, pred, pox, poy, n, rbuf, has_res):
    for j in range(n):
        for i in range(n):
            v = pred[poy + j, pox + i]
            if has_res:
                v += rbuf[j, i]
                if v < 0:
                    v = 0
                elif v > 255:
                    v = 255
            rec[oy + j, ox + i] = v


@njit(cache=True)
def code_tu(buf, st, orig, rec, ox, oy, pred, pox, poy, n, q64, res, tmp, lev, rbuf):
    """Quantise, emit cbf + levels, reconstruct one TU.  Returns bits written."""
    for j in range(n):
        for i in range(n):
            res[j, i] = orig[oy + j, ox + i] - pred[poy + j, pox + i]
    nnz = forward_quant(res, n, q64, tmp, lev)
    p0 = st[0]
    if nnz == 0:
        put_bits(buf, st, 0, 1)
        add_residual(rec, ox, oy, pred, pox, poy, n, rbuf, False)
    else:
        put_bits(buf, st, 1, 1)
        put_coeffs(buf, st, lev, n, nnz)
        dequant_inverse(lev, n, q64, nnz, tmp, rbuf)
        add_residual(rec, ox, oy, pred, pox, poy, n, rbuf, True)
    return st[0] - p0


@njit(cache=True)
def set_motion(mf_mv, mf_ref, mode, x, y, s, mvs, refs_idx):
    npu = PU_COUNT[mode]
    for k in range(npu):
        px = x + PU_GEOM[mode, k, 0] * s // 4
        py = y + PU_GEOM[mode, k, 1] * s // 4
        pw = PU_GEOM[mode, k, 2] * s // 4
        ph = PU_GEOM[mode, k, 3] * s // 4
        for gy in range(py >> 2, (py + ph) >> 2):
            for gx in range(px >> 2, (px + pw) >> 2):
                if mode <= 8:
                    mf_mv[gy, gx, 0] = mvs[k, 0]
                    mf_mv[gy, gx, 1] = mvs[k, 1]
                    mf_ref[gy, gx] = refs_idx[k]
                else:
                    mf_mv[gy, gx, 0] = 0
                    mf_mv[gy, gx, 1] = 0
                    mf_ref[gy, gx] = -1


# ----------------------------------------------------------- frame level

@njit(cache=True)
def encode_frame(oy_, ou_, ov_, ry, ru, rv, nref, is_intra, qp, lam, lamm, rng,
                 lo8, hi8, mode_mask, me_mode, me_ref, me_range, me_mvp, me_set,
                 rec_y, rec_u, rec_v, mf_mv, mf_ref, buf, st, leaves, leaf_cost, nleaf,
                 visits, work, fcost, row0, row1):
    """Encode CTU rows [row0, row1) of a frame, appending to buf at bit st[0]
    and to leaves from index nleaf.  Returns (leaf count, fallback count).

    visits has shape (n_ctus, 4) and receives leaf evaluations per depth;
    fcost[0] accumulates the CTU RD costs."""
    H = oy_.shape[0]
    W = oy_.shape[1]
    q64 = qstep64(qp)
    pred = np.zeros((64, 64), np.int64)
    pu_ = np.zeros((32, 32), np.int64)
    pv_ = np.zeros((32, 32), np.int64)
    side = 2 * rng + 1
    tab = np.zeros((max(nref, 1), 3 * side * side, 17, 17), np.int64)
    tinfo = np.zeros(9, np.int64)
    rowbuf = np.zeros(64, np.int64)
    res = np.zeros((32, 32), np.float64)
    tmp = np.zeros((2, 32, 32), np.float64)
    lev = np.zeros((32, 32), np.int64)
    rbuf = np.zeros((32, 32), np.int64)
    cu_mode = np.zeros(85, np.int64)
    cu_merge = np.zeros(85, np.int64)
    cu_cbf = np.zeros(85, np.int64)
    cu_mv = np.zeros((85, 4, 2), np.int64)
    cu_ref = np.zeros((85, 4), np.int64)
    cu_dir = np.zeros((85, 4), np.int64)
    cu_leaf = np.zeros(85, np.int64)
    cu_split = np.zeros(85, np.bool_)
    cu_cost = np.zeros(85, np.int64)
    fallback = np.zeros(1, np.int64)
    stack = np.zeros((96, 3), np.int64)
    nctu_x = (W + 63) >> 6
    refbits = 1 if nref > 1 else 0
    cand_mv = np.zeros((3, 2), np.int64)
    cand_ref = np.zeros(3, np.int64)
    for t in range(row0, row1):
        for u in range(nctu_x):
            ci = t * nctu_x + u
            cx = u * 64
            cy = t * 64
            rdo_ctu(oy_, rec_y, ry, nref, W, H, cx, cy, mf_mv, mf_ref, q64, lam, lamm, rng,
                    is_intra, lo8, hi8, mode_mask, me_mode, me_ref, me_range, me_mvp, me_set,
                    pred, tab, tinfo, rowbuf, res, tmp, lev, rbuf,
                    cu_mode, cu_merge, cu_cbf, cu_mv, cu_ref, cu_dir, cu_leaf, cu_split, cu_cost,
                    visits[ci], fallback, work[ci])
            fcost[0] += cu_cost[0]
            # pre-order emission of the decided tree
            sp = 1
            stack[0, 0] = 0
            stack[0, 1] = cx
            stack[0, 2] = cy
            while sp > 0:
                sp -= 1
                d = stack[sp, 0]
                x = stack[sp, 1]
                y = stack[sp, 2]
                s = 64 >> d
                if x >= W or y >= H:
                    continue
                inside = x + s <= W and y + s <= H
                cid = cu_id(d, x - cx, y - cy)
                if cu_split[cid]:
                    if inside:
                        put_bits(buf, st, 1, 1)
                    h = s >> 1
                    for k in range(3, -1, -1):
                        stack[sp, 0] = d + 1
                        stack[sp, 1] = x + (k & 1) * h
                        stack[sp, 2] = y + (k >> 1) * h
                        sp += 1
                    continue
                if d < 3:
                    put_bits(buf, st, 0, 1)
                mode = cu_mode[cid]
                mvs = cu_mv[cid]
                rfs = cu_ref[cid]
                dirs = cu_dir[cid]
                cbf = cu_cbf[cid]
                put_bits(buf, st, mode, 4)
                if mode == 0:
                    put_bits(buf, st, cu_merge[cid], 2)
                    put_bits(buf, st, cbf, 1)
                elif mode <= 8:
                    mvpx, mvpy = neighbours(mf_mv, mf_ref, x, y, cx, cy, cand_mv, cand_ref)
                    for k in range(PU_COUNT[mode]):
                        if refbits:
                            put_bits(buf, st, rfs[k], 1)
                        put_se(buf, st, mvs[k, 0] - mvpx)
                        put_se(buf, st, mvs[k, 1] - mvpy)
                else:
                    for k in range(PU_COUNT[mode]):
                        put_bits(buf, st, dirs[k], 2)
                predict_leaf(mode, x, y, s, cx, cy, mvs, rfs, dirs,
                             rec_y, rec_u, rec_v, ry, ru, rv, W, H, pred, pu_, pv_)
                tsz = s if s < 32 else 32
                c = tsz >> 1
                if mode != 0 or cbf:
                    for ty in range(0, s, tsz):
                        for tx in range(0, s, tsz):
                            code_tu(buf, st, oy_, rec_y, x + tx, y + ty, pred, tx, ty, tsz, q64, res, tmp, lev, rbuf)
                            code_tu(buf, st, ou_, rec_u, (x + tx) >> 1, (y + ty) >> 1, pu_, tx >> 1, ty >> 1, c, q64, res, tmp, lev, rbuf)
                            code_tu(buf, st, ov_, rec_v, (x + tx) >> 1, (y + ty) >> 1, pv_, tx >> 1, ty >> 1, c, q64, res, tmp, lev, rbuf)
                else:
                    add_residual(rec_y, x, y, pred, 0, 0, s, rbuf, False)
                    add_residual(rec_u, x >> 1, y >> 1, pu_, 0, 0, s >> 1, rbuf, False)
                    add_residual(rec_v, x >> 1, y >> 1, pv_, 0, 0, s >> 1, rbuf, False)
                set_motion(mf_mv, mf_ref, mode, x, y, s, mvs, rfs)
                row = leaves[nleaf]
                row[L_CTU] = ci
                row[L_X] = x
                row[L_Y] = y
                row[L_DEPTH] = d
                row[L_MODE] = mode
                row[L_MERGE] = cu_merge[cid] if mode == 0 else -1
                row[L_CBF] = cbf
                for k in range(4):
                    row[L_MV + 2 * k] = mvs[k, 0]
                    row[L_MV + 2 * k + 1] = mvs[k, 1]
                    row[L_REF + k] = rfs[k]
                    row[L_DIR + k] = dirs[k]
                leaf_cost[nleaf] = cu_leaf[cid]
                nleaf += 1
    return nleaf, fallback[0]


@njit(cache=True)
def decode_frame(buf, st, W, H, nref, is_intra, qp, ry, ru, rv, rec_y, rec_u, rec_v, mf_mv, mf_ref):
    """Parse one byte-aligned frame payload starting at bit st[0]."""
    q64 = qstep64(qp)
    pred = np.zeros((64, 64), np.int64)
    pu_ = np.zeros((32, 32), np.int64)
    pv_ = np.zeros((32, 32), np.int64)
    tmp = np.zeros((2, 32, 32), np.float64)
    lev = np.zeros((32, 32), np.int64)
    rbuf = np.zeros((32, 32), np.int64)
    mvs = np.zeros((4, 2), np.int64)
    rfs = np.zeros(4, np.int64)
    dirs = np.zeros(4, np.int64)
    cand_mv = np.zeros((3, 2), np.int64)
    cand_ref = np.zeros(3, np.int64)
    stack = np.zeros((96, 3), np.int64)
    refbits = 1 if nref > 1 else 0
    nctu_x = (W + 63) >> 6
    nctu_y = (H + 63) >> 6
    for t in range(nctu_y):
        for u in range(nctu_x):
            cx = u * 64
            cy = t * 64
            sp = 1
            stack[0, 0] = 0
            stack[0, 1] = cx
            stack[0, 2] = cy
            while sp > 0:
                if st[1] != 0:
                    return
                sp -= 1
                d = stack[sp, 0]
                x = stack[sp, 1]
                y = stack[sp, 2]
                s = 64 >> d
                if x >= W or y >= H:
                    continue
                inside = x + s <= W and y + s <= H
                split = False
                if d < 3:
                    if inside:
                        split = get_bits(buf, st, 1) == 1
                    else:
                        split = True
                if split:
                    h = s >> 1
                    for k in range(3, -1, -1):
                        stack[sp, 0] = d + 1
                        stack[sp, 1] = x + (k & 1) * h
                        stack[sp, 2] = y + (k >> 1) * h
                        sp += 1
                    continue
                mode = get_bits(buf, st, 4)
                if mode > 10 or (is_intra and mode < 9):
                    st[1] = 2
                    return
                cbf = 1
                mvpx = 0
                mvpy = 0
                for k in range(4):
                    mvs[k, 0] = 0
                    mvs[k, 1] = 0
                    rfs[k] = 0
                    dirs[k] = -1
                if mode <= 8:
                    mvpx, mvpy = neighbours(mf_mv, mf_ref, x, y, cx, cy, cand_mv, cand_ref)
                if mode == 0:
                    mi = get_bits(buf, st, 2)
                    cbf = get_bits(buf, st, 1)
                    if mi > 2 or cand_ref[mi] >= nref:
                        st[1] = 2
                        return
                    mvs[0, 0] = cand_mv[mi, 0]
                    mvs[0, 1] = cand_mv[mi, 1]
                    rfs[0] = cand_ref[mi]
                elif mode <= 8:
                    for k in range(PU_COUNT[mode]):
                        rfs[k] = get_bits(buf, st, 1) if refbits else 0
                        mvs[k, 0] = get_se(buf, st) + mvpx
                        mvs[k, 1] = get_se(buf, st) + mvpy
                else:
                    for k in range(PU_COUNT[mode]):
                        dirs[k] = get_bits(buf, st, 2)
                        rfs[k] = -1
                if st[1] != 0:
                    return
                if mode <= 8:
                    for k in range(PU_COUNT[mode]):
                        px = x + PU_GEOM[mode, k, 0] * s // 4
                        py = y + PU_GEOM[mode, k, 1] * s // 4
                        pw = PU_GEOM[mode, k, 2] * s // 4
                        ph = PU_GEOM[mode, k, 3] * s // 4
                        if not block_inside(px + mvs[k, 0], py + mvs[k, 1], pw, ph, W, H) or rfs[k] >= nref:
                            st[1] = 2
                            return
                predict_leaf(mode, x, y, s, cx, cy, mvs, rfs, dirs,
                             rec_y, rec_u, rec_v, ry, ru, rv, W, H, pred, pu_, pv_)
                tsz = s if s < 32 else 32
                c = tsz >> 1
                if mode != 0 or cbf:
                    for ty in range(0, s, tsz):
                        for tx in range(0, s, tsz):
                            for plane in range(3):
                                n = tsz if plane == 0 else c
                                has = get_bits(buf, st, 1)
                                if has:
                                    nnz = get_coeffs(buf, st, lev, n)
                                    if st[1] != 0:
                                        return
                                    dequant_inverse(lev, n, q64, nnz, tmp, rbuf)
                                if plane == 0:
                                    add_residual(rec_y, x + tx, y + ty, pred, tx, ty, n, rbuf, has == 1)
                                elif plane == 1:
                                    add_residual(rec_u, (x + tx) >> 1, (y + ty) >> 1, pu_, tx >> 1, ty >> 1, n, rbuf, has == 1)
                                else:
                                    add_residual(rec_v, (x + tx) >> 1, (y + ty) >> 1, pv_, tx >> 1, ty >> 1, n, rbuf, has == 1)
                else:
                    add_residual(rec_y, x, y, pred, 0, 0, s, rbuf, False)
                    add_residual(rec_u, x >> 1, y >> 1, pu_, 0, 0, s >> 1, rbuf, False)
                    add_residual(rec_v, x >> 1, y >> 1, pv_, 0, 0, s >> 1, rbuf, False)
                set_motion(mf_mv, mf_ref, mode, x, y, s, mvs, rfs)
    if st[0] & 7:
        st[0] += 8 - (st[0] & 7)

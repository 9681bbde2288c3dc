"""PSNR under the upscale protocol, Bjontegaard delta rate, time savings
and Table-style reports."""

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence as Seq

import numpy as np

from .media import Resolution, Sequence, upscale_luma_stack

PSNR_CAP = 100.0


def psnr_luma(ref, test):
    """10 log10(255^2 / MSE) over all samples, capped."""
    ref = np.asarray(ref, np.float64)
    test = np.asarray(test, np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(255.0 ** 2 / mse)))


def psnr_upscaled(reference: Sequence, test: Sequence, top: Resolution) -> float:
    """Luma PSNR of test against reference after bicubic upscaling of test
    to the top rung."""
    if len(reference) != len(test):
        raise ValueError(f"frame count mismatch: {len(reference)} vs {len(test)}")
    if (reference.width, reference.height) != (top.width, top.height):
        raise ValueError("reference must be at the top resolution")
    up = upscale_luma_stack(test.frames, top.width, top.height)
    return psnr_luma(reference.luma_stack(), up)


# -------------------------------------------------------------- BD rate

@dataclass(frozen=True)
class RdPoint:
    bitrate: float
    quality: float

    def __post_init__(self):
        if not self.bitrate > 0:
            raise ValueError("bitrate must be positive")
        if not math.isfinite(self.quality):
            raise ValueError("quality must be finite")


@dataclass(frozen=True)
class BdResult:
    bd_rate_percent: Optional[float]
    overlap_valid: bool
    monotone: bool = True          # quality strictly increasing with bitrate on both curves


def _curve(points):
    pts = sorted(points, key=lambda p: p.bitrate)
    q = np.array([p.quality for p in pts], np.float64)
    r = np.log10(np.array([p.bitrate for p in pts], np.float64))
    return q, r, bool(np.all(np.diff(q) > 0))


def _integral(coef, lo, hi):
    P = np.polyint(coef)
    return np.polyval(P, hi) - np.polyval(P, lo)


def bd_rate(anchor: Seq[RdPoint], test: Seq[RdPoint]) -> BdResult:
    """Average rate difference at equal quality from cubic fits of
    log10(rate) against quality over the overlapping quality interval.
    Positive: the test curve needs more bits."""
    if len(anchor) < 4 or len(test) < 4:
        raise ValueError("bd_rate needs at least 4 points per curve")
    qa, ra, ma = _curve(anchor)
    qt, rt, mt = _curve(test)
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        return BdResult(None, False, ma and mt)
    pa = np.polyfit(qa, ra, 3)
    pt = np.polyfit(qt, rt, 3)
    diff = (_integral(pt, lo, hi) - _integral(pa, lo, hi)) / (hi - lo)
    return BdResult(float((10 ** diff - 1) * 100), True, ma and mt)


def ladder_bd_rate(anchor: Dict, test: Dict, resolutions: Seq[int]) -> BdResult:
    """Per-resolution BD rate over the rungs (i, j), averaged uniformly
    across resolutions.  anchor / test map (i, j) -> RdPoint."""
    vals, ok, mono = [], True, True
    for i in resolutions:
        a = [p for (ii, _), p in sorted(anchor.items()) if ii == i]
        t = [p for (ii, _), p in sorted(test.items()) if ii == i]
        r = bd_rate(a, t)
        ok &= r.overlap_valid
        mono &= r.monotone
        if r.overlap_valid:
            vals.append(r.bd_rate_percent)
    if not ok:
        return BdResult(None, False, mono)
    return BdResult(float(np.mean(vals)), True, mono)


# --------------------------------------------------------- time savings

def time_savings(baseline, scheme):
    """(dT_S, dT_P) in percent against the stand-alone run."""
    lb, ls = baseline.plan.ladder, scheme.plan.ladder
    if lb != ls:
        raise ValueError("runs cover different ladders")
    ds = 100.0 * (1 - scheme.serial_total / baseline.serial_total)
    dp = 100.0 * (1 - scheme.modelled_makespan / baseline.modelled_makespan)
    return ds, dp


# --------------------------------------------------------------- report

@dataclass
class SchemeRow:
    scheme: str
    dT_S: float
    dT_P: float
    BDR_P: Optional[float]


def _pct(v):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}%"


def render_report(rows: List[SchemeRow], note: str = ""):
    """Markdown and CSV tables with one row per scheme."""
    if not rows:
        raise ValueError("report needs at least one scheme")
    md = ["PSNR is luma only, measured after bicubic upscaling to the top rung; "
          "BD rates are averaged uniformly over resolutions and sequences.", ""]
    if note:
        md += [note, ""]
    md += ["| Scheme | ΔT_S | ΔT_P | BDR_P | BDR_V |", "|---|---|---|---|---|"]
    for r in rows:
        md.append(f"| {r.scheme} | {_pct(r.dT_S)} | {_pct(r.dT_P)} | {_pct(r.BDR_P)} | n/a¹ |")
    md += ["", "¹ VMAF is not computed, so BDR_V is not reported."]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "dT_S", "dT_P", "BDR_P", "BDR_V"])
    for r in rows:
        w.writerow([r.scheme, repr(float(r.dT_S)), repr(float(r.dT_P)),
                    "" if r.BDR_P is None else repr(float(r.BDR_P)), "n/a"])
    return "\n".join(md) + "\n", buf.getvalue()


def parse_report_csv(text):
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(SchemeRow(rec["scheme"], float(rec["dT_S"]), float(rec["dT_P"]),
                              float(rec["BDR_P"]) if rec["BDR_P"] else None))
    return rows


def write_rdpoints(rows, stream):
    """rows: iterable of (scheme, i, j, achieved_bitrate, psnr_y)."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["scheme", "i", "j", "achieved_bitrate", "psnr_y"])
    for r in rows:
        w.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4]))])


def read_rdpoints(stream):
    """-> {scheme: {(i, j): RdPoint}}"""
    out: Dict[str, Dict] = {}
    for rec in csv.DictReader(stream):
        out.setdefault(rec["scheme"], {})[(int(rec["i"]), int(rec["j"]))] = RdPoint(
            float(rec["achieved_bitrate"]), float(rec["psnr_y"]))
    return out

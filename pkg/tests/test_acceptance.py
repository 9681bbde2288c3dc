"""Acceptance criteria on the desk corpus.  Each test prints one PASS/FAIL
line (collected into the session summary) with the measured values."""

import numpy as np
import pytest

import acceptance_corpus as corpus
from conftest import ACCEPTANCE_LINES
from multienc.metrics import RdPoint, bd_rate
from multienc.orchestrator import model_makespan


@pytest.fixture(scope="module")
def results():
    return corpus.load_or_compute()


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _mean(results, scheme, key):
    return float(np.mean([r[key] for r in results["schemes"][scheme]]))


def test_c01_search_compliance(results):
    v = {s: sum(r["violations"] for r in rows) for s, rows in results["schemes"].items()}
    report(1, sum(v.values()) == 0, f"violations per scheme {v}")


def test_c02_bound_formulas():
    bad = corpus.exhaustive_bound_checks()
    report(2, bad == 0, f"{bad} mismatches against enumerated tables")


def _paths_oracle(times, edges):
    down = {n: [b for a, b in edges if a == n] for n in times}

    def paths(n):
        yield (n,)
        for b in down[n]:
            for p in paths(b):
                yield (n,) + p

    best = 0.0
    for n in times:
        for p in paths(n):
            t = 0.0
            for k in p:
                t += times[k]
            best = max(best, t)
    return best


def test_c03_time_model(results):
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(1, 11))
        times = {k: float(rng.uniform(0, 10)) for k in range(n)}
        edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.uniform() < 0.4]
        bad += model_makespan(times, edges) != _paths_oracle(times, edges)
    serial_bad = sum(r["serial_total"] != r["sum_node_times"] for rows in results["schemes"].values() for r in rows)
    report(3, bad == 0 and serial_bad == 0, f"{bad}/200 DAG mismatches, {serial_bad} serial-sum mismatches")


def test_c04_directional_times(results):
    ts = {s: _mean(results, s, "dT_S") for s in results["schemes"] if s != "standalone"}
    tp = {s: _mean(results, s, "dT_P") for s in results["schemes"] if s != "standalone"}
    checks = {
        "all dT_S > 0": all(v > 0 for v in ts.values()),
        "|MR1 dT_P| <= 3": abs(tp["mr1"]) <= 3,
        "ME4 max dT_P": tp["me4"] >= max(tp.values()),
        "MR2/MR3/ME1-4 dT_P > 0": all(tp[s] > 0 for s in ("mr2", "mr3", "me1", "me2", "me3", "me4")),
    }
    fmt = ", ".join(f"{s} {ts[s]:.1f}/{tp[s]:.1f}" for s in ts)
    failed = [k for k, ok in checks.items() if not ok]
    report(4, not failed, f"dT_S/dT_P % [{fmt}]" + (f"; failed: {failed}" if failed else ""))


def test_c05_coding_efficiency(results):
    out, ok = [], True
    for s, rows in results["schemes"].items():
        if s == "standalone":
            continue
        valid = all(r["overlap_valid"] for r in rows)
        bd = float(np.mean([r["BDR_P"] for r in rows])) if valid else float("nan")
        ok &= valid and -1 <= bd <= 10
        out.append(f"{s} {bd:.2f}")
    report(5, ok, "BDR_P % [" + ", ".join(out) + "]")


def test_c06_bd_oracle():
    c = [RdPoint(r, q) for r, q in ((1e5, 30.0), (2e5, 33.5), (4e5, 36.2), (8e5, 38.4))]
    s = [RdPoint(p.bitrate * 1.1, p.quality) for p in c]
    a, b, d = bd_rate(c, c).bd_rate_percent, bd_rate(c, s).bd_rate_percent, bd_rate(s, c).bd_rate_percent
    ok = a == 0 and abs(b - 10) <= 0.01 and abs(d + 9.0909) <= 0.02
    report(6, ok, f"identity {a}, x1.10 {b:.4f}, swapped {d:.4f}")


def test_c07_rate_control(results):
    rows = [r for r in results["rc"] if not r["saturated"]]
    hit = sum(abs(r["achieved"] / r["target"] - 1) <= 0.10 for r in rows)
    frac = hit / len(rows) if rows else 0.0
    scan = all(r["qp"] == r["scan_qp"] for r in results["rc_fixture"])
    report(7, frac >= 0.9 and scan,
           f"{hit}/{len(rows)} non-saturated rungs within 10% ({len(results['rc']) - len(rows)} saturated); "
           f"exhaustive-scan match {scan}")


def test_c08_determinism_roundtrips(results):
    r = results["roundtrips"]
    report(8, all(r.values()), str(r))


def test_c09_predictor(results):
    p = results["predictor"]
    b = [x for x in p["buckets"] if x["accuracy"] == x["accuracy"]]
    good = sum(x["accuracy"] - x["baseline"] >= 0.05 for x in b)
    viol = sum(r["violations"] for s in ("mr2", "me1") for r in results["schemes"][s])
    ok = p["samples"] >= 5000 and good * 2 >= len(b) and viol == 0
    report(9, ok, f"{p['samples']} samples, {good}/{len(b)} buckets beat majority by >= 5 pp, "
                  f"MR2/ME1 violations {viol}")


def test_c10_dominance(results):
    rows = results["dominance"]
    ok = [r["free_total"] <= r["constrained_total"] for r in rows]
    report(10, all(ok), f"{sum(ok)}/{len(rows)} fixtures with unconstrained rd_cost <= constrained")

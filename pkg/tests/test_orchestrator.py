import json
import os

import pytest
from hypothesis import given, strategies as st

from multienc.codec import EncoderConfig
from multienc.media import Resolution, synthesize
from multienc.orchestrator import (
    PlanExecutionError, RunInputs, _source_row, ladder_sequences, model_makespan,
    run_parallel, run_serial, split_dataset, write_outputs,
)
from multienc.schemes import Ladder, SchemeId, plan


def _all_paths_oracle(times, edges):
    down = {n: [b for a, b in edges if a == n] for n in times}

    def paths(n):
        # every path starting at n
        yield (n,)
        for b in down[n]:
            for p in paths(b):
                yield (n,) + p

    # each path summed from its first node, the order a schedule accumulates time
    best = 0.0
    for n in times:
        for p in paths(n):
            t = 0.0
            for k in p:
                t += times[k]
            best = max(best, t)
    return best


@st.composite
def dags(draw):
    n = draw(st.integers(1, 10))
    times = {k: draw(st.floats(0, 100, allow_nan=False)) for k in range(n)}
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if draw(st.booleans())]
    return times, edges


@given(dags())
def test_makespan_equals_all_paths_oracle(d):
    times, edges = d
    assert model_makespan(times, edges) == _all_paths_oracle(times, edges)


@given(dags())
def test_makespan_bounds(d):
    times, edges = d
    m = model_makespan(times, edges)
    assert max(times.values()) <= m <= sum(times.values()) + 1e-9
    assert model_makespan(times, []) == max(times.values())
    chain = [(k, k + 1) for k in range(len(times) - 1)]
    assert model_makespan(times, chain) == pytest.approx(sum(times.values()))


def test_makespan_examples_and_errors():
    assert model_makespan({"A": 2, "B": 3, "C": 5, "D": 7}, [("A", "B"), ("A", "C"), ("A", "D")]) == 9
    with pytest.raises(ValueError, match="cycle"):
        model_makespan({1: 1, 2: 1}, [(1, 2), (2, 1)])
    with pytest.raises(ValueError):
        model_makespan({1: 1}, [(1, 3)])
    with pytest.raises(ValueError):
        model_makespan({1: -1}, [])


def test_source_row_mapping():
    # same size: row r reads row r; 2x upscale: target row r reads half as deep
    assert [_source_row(r, 432, 432) for r in range(7)] == list(range(7))
    assert [_source_row(r, 432, 216) for r in range(7)] == [0, 0, 1, 1, 2, 2, 3]


LAD = Ladder((Resolution(1, 64, 32), Resolution(2, 128, 64)), ((2e4, 4e4), (6e4, 1.2e5)))


@pytest.fixture(scope="module")
def tiny_inputs():
    src = synthesize("checkerboard-pan", 128, 64, 3, 1)
    seqs = ladder_sequences(src, LAD)
    qps = {(1, 1): 40, (1, 2): 34, (2, 1): 38, (2, 2): 32}
    return RunInputs(seqs, qps, EncoderConfig(search_range=2), reference_top=seqs[2])


@pytest.mark.parametrize("scheme", [SchemeId.StandAlone, SchemeId.MR3, SchemeId.ME4])
def test_serial_and_parallel_are_bit_identical(tiny_inputs, scheme):
    p = plan(scheme, LAD)
    a = run_serial(p, tiny_inputs)
    b = run_parallel(p, 2, tiny_inputs)
    for n in p.nodes:
        assert a.nodes[n].bitstream.data == b.nodes[n].bitstream.data
        assert a.nodes[n].analysis == b.nodes[n].analysis
    assert a.violations == 0 and b.violations == 0
    assert a.serial_total == pytest.approx(b.serial_total)


def test_run_result_time_invariants(tiny_inputs):
    for s in SchemeId:
        if s.uses_predictor:
            continue
        r = run_serial(plan(s, LAD), tiny_inputs)
        per = [sum(r.nodes[n].stats.work.sum(axis=(0, 1))) for n in r.nodes]
        assert all(v > 0 for v in per)
        assert r.modelled_makespan <= r.serial_total + 1e-12
        assert r.node_makespan <= r.serial_total + 1e-12
        assert r.modelled_makespan <= r.node_makespan + 1e-12
        assert r.measured_makespan <= r.measured_serial + 1e-12


def test_standalone_pipelined_equals_slowest_node(tiny_inputs):
    r = run_serial(plan(SchemeId.StandAlone, LAD), tiny_inputs)
    from multienc.orchestrator import node_time
    assert r.modelled_makespan == pytest.approx(max(node_time(n.stats, LAD.resolution(k)) for k, n in r.nodes.items()))
    assert r.serial_total == pytest.approx(sum(node_time(n.stats, LAD.resolution(k)) for k, n in r.nodes.items()))


def test_missing_predictor_fails_with_cause(tiny_inputs):
    with pytest.raises(PlanExecutionError) as ei:
        run_serial(plan(SchemeId.ME1, LAD), tiny_inputs)
    assert ei.value.__cause__ is not None


def test_write_outputs(tiny_inputs, tmp_path):
    r = run_serial(plan(SchemeId.MR1, LAD), tiny_inputs)
    write_outputs(r, tmp_path)
    names = set(os.listdir(tmp_path))
    assert {f"{i}_{j}.tvc" for i, j in LAD.nodes()} <= names and "stats.json" in names
    st = json.loads((tmp_path / "stats.json").read_text())
    assert st["scheme"] == "mr1" and len(st["nodes"]) == 4
    assert {"serial_total", "modelled_makespan", "measured_wall"} <= st.keys()


def test_split_dataset_from_standalone(tiny_inputs):
    r = run_serial(plan(SchemeId.StandAlone, LAD), tiny_inputs)
    ds = split_dataset([(r, tiny_inputs.sequences)])
    assert ds and all(len(X) == len(y) for X, y in ds.values())

"""Execute encode plans serially or on a process pool, and model their
serial and parallel time."""

import json
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

from . import workmodel
from .analysis import SegmentAnalysis, serialize
from .codec import EncoderConfig, encode_representation
from .codec.encoder import Bitstream
from .codec.types import EncodeStats
from .media import Sequence, downscale, upscale_luma_stack
from .metrics import psnr_luma
from .schemes.plan import EncodePlan, Ladder, Node, SchemeId
from .schemes.plan import predictor_pairs
from .schemes.predictor import SplitPredictor, split_samples, stack_dataset
from .schemes.recipes import RecipeContext, frame_constraints


class PlanExecutionError(RuntimeError):
    pass


# ------------------------------------------------------------ time models

def model_makespan(per_node_times: Dict, dag: Iterable[Tuple]) -> float:
    """Longest node-weighted path through the DAG (unlimited workers)."""
    times = dict(per_node_times)
    down = {n: [] for n in times}
    indeg = {n: 0 for n in times}
    for a, b in dag:
        if a not in times or b not in times:
            raise ValueError(f"edge {a}->{b} names an unknown node")
        down[a].append(b)
        indeg[b] += 1
    for n, t in times.items():
        if t < 0:
            raise ValueError(f"negative time for node {n}")
    ready = [n for n in times if indeg[n] == 0]
    finish = {}
    start = {n: 0.0 for n in times}
    seen = 0
    while ready:
        n = ready.pop()
        seen += 1
        finish[n] = start[n] + times[n]
        for b in down[n]:
            start[b] = max(start[b], finish[n])
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    if seen != len(times):
        raise ValueError("cycle detected in DAG")
    return max(finish.values(), default=0.0)


def _source_row(row, H, Hs):
    """Last reference CTU row read by target CTU row `row` under centre-sample
    co-location (8x8 and 4x4 grids)."""
    y8 = min(8 * row + 7, H // 8 - 1) * 8 + 4
    y4 = min(16 * row + 15, H // 4 - 1) * 4 + 2
    return max(y8 * Hs // H, y4 * Hs // H) // 64


def row_times_for(plan: EncodePlan, stats: Dict[Node, EncodeStats], timing="model"):
    """Per node, per frame, per CTU row seconds: modelled from the operation
    counters ("model") or as measured ("measured")."""
    if timing == "measured":
        return {n: stats[n].row_times for n in plan.nodes}
    if timing != "model":
        raise ValueError(f"unknown timing {timing!r}")
    out = {}
    for n in plan.nodes:
        r = plan.ladder.resolution(n)
        out[n] = workmodel.row_times(stats[n], r.width, r.height)
    return out


def pipelined_makespan(plan: EncodePlan, stats: Dict[Node, EncodeStats], timing="model") -> float:
    """Makespan of the plan when every encode streams its analysis: CTU row
    r of frame f of a dependent may start once its own previous row is done
    and every reference has finished the rows of frame f it co-locates
    with.  Built as a row-level DAG and evaluated with model_makespan."""
    times, edges = {}, []
    res = {n: plan.ladder.resolution(n) for n in plan.nodes}
    rows_of = row_times_for(plan, stats, timing)
    for n in plan.nodes:
        rt = rows_of[n]
        H = res[n].height
        prev = None
        for f, rows in enumerate(rt):
            for r, t in enumerate(rows):
                key = (n, f, r)
                times[key] = t
                if prev is not None:
                    edges.append((prev, key))
                prev = key
                for s in plan.upstream(n):
                    srows = rows_of[s][f]
                    sr = min(_source_row(r, H, res[s].height), len(srows) - 1)
                    edges.append(((s, f, sr), key))
    return model_makespan(times, edges)


def node_time(st: EncodeStats, resolution=None) -> float:
    """Measured seconds, or modelled seconds when the resolution is given."""
    if resolution is None:
        return float(sum(st.frame_times))
    return float(sum(workmodel.frame_times(st, resolution.width, resolution.height)))


# ------------------------------------------------------------------ runs

@dataclass
class NodeResult:
    node: Node
    qp: int
    target_bitrate: float
    bitstream: Bitstream
    analysis: SegmentAnalysis
    stats: EncodeStats
    violations: int
    psnr_top: float = float("nan")       # luma PSNR after upscaling to the top rung


@dataclass
class RunResult:
    scheme: SchemeId
    plan: EncodePlan
    nodes: Dict[Node, NodeResult]
    serial_total: float
    measured_wall: float
    modelled_makespan: float
    node_makespan: float                 # node-level DAG, no streaming
    workers: int = 1
    timing: str = "model"                # source of the three times above
    measured_serial: float = float("nan")
    measured_makespan: float = float("nan")

    @property
    def stats(self):
        return {n: r.stats for n, r in self.nodes.items()}

    @property
    def violations(self):
        return sum(r.violations for r in self.nodes.values())

    def to_json(self):
        lad = self.plan.ladder
        nodes = []
        for n in sorted(self.nodes):
            r = self.nodes[n]
            res = lad.resolution(n)
            nodes.append({
                "i": n[0], "j": n[1], "resolution": f"{res.width}x{res.height}",
                "bitrate": lad.bitrate(n), "achieved_bitrate": r.stats.achieved_bitrate,
                "qp": r.qp, "seconds": node_time(r.stats, res), "measured_seconds": node_time(r.stats),
                "bits": r.stats.total_bits,
                "psnr_y": r.stats.psnr_y, "psnr_top": r.psnr_top,
                "depth_visits": [int(v) for v in r.stats.depth_visits],
                "violations": r.violations,
                "frame_times": r.stats.frame_times,
            })
        return {
            "scheme": self.scheme.value, "serial_total": self.serial_total,
            "modelled_makespan": self.modelled_makespan, "node_makespan": self.node_makespan,
            "measured_wall": self.measured_wall, "workers": self.workers, "timing": self.timing,
            "measured_serial": self.measured_serial, "measured_makespan": self.measured_makespan,
            "ladder": {"resolutions": [[r.width, r.height] for r in lad.resolutions],
                       "bitrates": [list(b) for b in lad.bitrates]},
            "nodes": nodes,
        }


@dataclass
class RunInputs:
    """Per-resolution sources (index i -> Sequence), the QP of every rung and
    the encoder template."""
    sequences: Dict[int, Sequence]
    qps: Dict[Node, int]
    config: EncoderConfig = EncoderConfig()
    predictor: Optional[SplitPredictor] = None
    reference_top: Optional[Sequence] = None   # for PSNR after upscaling
    cache: Optional[Dict] = None               # shared results of unconstrained encodes


def ladder_sequences(source: Sequence, ladder: Ladder) -> Dict[int, Sequence]:
    return {r.index: downscale(source, r) for r in ladder.resolutions}


def _encode_node(plan: EncodePlan, node: Node, inputs: RunInputs, sources: Dict[Node, SegmentAnalysis]):
    lad = plan.ladder
    res = lad.resolution(node)
    seq = inputs.sequences[node[0]]
    qp = inputs.qps[node]
    cfg = EncoderConfig(qp, inputs.config.search_range, inputs.config.reference_count, lad.bitrate(node))
    terms = plan.recipes.get(node, ())
    ctx = RecipeContext(res, qp, cfg.search_range, sources, seq, inputs.predictor,
                        skip_intra_frame=plan.scheme in (SchemeId.ME1, SchemeId.ME2, SchemeId.ME3, SchemeId.ME4))
    cons = (lambda f: frame_constraints(terms, ctx, f)) if terms else None
    keep = inputs.reference_top is not None
    r = encode_representation(seq, cfg, constraints=cons, resolution=res, keep_recon=keep)
    top = float("nan")
    if keep:
        t = inputs.reference_top
        up = upscale_luma_stack(r.recon.frames, t.width, t.height)
        top = psnr_luma(t.luma_stack(), up)
    return NodeResult(node, qp, lad.bitrate(node), r.bitstream, r.analysis, r.stats, r.violations, top)


def _cache_key(plan, node, inputs):
    res = plan.ladder.resolution(node)
    c = inputs.config
    return (id(inputs.sequences[node[0]]), res.width, res.height, inputs.qps[node], c.search_range,
            c.reference_count, plan.ladder.bitrate(node), inputs.reference_top is not None)


def _run_node(plan, node, inputs, sources):
    """Encode a node, reusing a cached identical unconstrained encode."""
    if plan.recipes.get(node) or inputs.cache is None:
        return _encode_node(plan, node, inputs, sources)
    key = _cache_key(plan, node, inputs)
    if key not in inputs.cache:
        inputs.cache[key] = _encode_node(plan, node, inputs, sources)
    return inputs.cache[key]


def _finish(plan, results, wall, workers, timing="model"):
    stats = {n: r.stats for n, r in results.items()}
    res = (lambda n: plan.ladder.resolution(n)) if timing == "model" else (lambda n: None)
    per = {n: node_time(s, res(n)) for n, s in stats.items()}
    return RunResult(plan.scheme, plan, results, float(sum(per.values())), wall,
                     pipelined_makespan(plan, stats, timing), model_makespan(per, plan.edges), workers,
                     timing, float(sum(node_time(s) for s in stats.values())),
                     pipelined_makespan(plan, stats, "measured"))


def run_serial(plan: EncodePlan, inputs: RunInputs, timing="model") -> RunResult:
    results: Dict[Node, NodeResult] = {}
    t0 = time.perf_counter()
    for n in plan.topological_order():
        srcs = {}
        for s in plan.upstream(n):
            if s not in results:
                raise PlanExecutionError(f"node {n} aborted: upstream {s} unavailable")
            srcs[s] = results[s].analysis
        try:
            results[n] = _run_node(plan, n, inputs, srcs)
        except Exception as e:
            raise PlanExecutionError(f"encode of node {n} failed") from e
    return _finish(plan, results, time.perf_counter() - t0, 1, timing)


_WORKER_INPUTS = None


def _init_worker(inputs):
    global _WORKER_INPUTS
    _WORKER_INPUTS = inputs


def _worker(plan, node, sources):
    return _encode_node(plan, node, _WORKER_INPUTS, sources)


def run_parallel(plan: EncodePlan, worker_count: int, inputs: RunInputs, timing="model") -> RunResult:
    """Dispatch each node as soon as all its references are complete."""
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    order = plan.topological_order()
    results: Dict[Node, NodeResult] = {}
    failed: Dict[Node, BaseException] = {}
    pending = {}
    t0 = time.perf_counter()
    shipped = RunInputs(inputs.sequences, inputs.qps, inputs.config, inputs.predictor, inputs.reference_top)
    with ProcessPoolExecutor(worker_count, initializer=_init_worker, initargs=(shipped,)) as pool:
        todo = list(order)
        while todo or pending:
            for n in list(todo):
                ups = plan.upstream(n)
                bad = [s for s in ups if s in failed]
                if bad:
                    failed[n] = PlanExecutionError(f"node {n} aborted: upstream {bad[0]} failed")
                    failed[n].__cause__ = failed[bad[0]]
                    todo.remove(n)
                elif all(s in results for s in ups):
                    srcs = {s: results[s].analysis for s in ups}
                    pending[pool.submit(_worker, plan, n, srcs)] = n
                    todo.remove(n)
            if not pending:
                break
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for fut in done:
                n = pending.pop(fut)
                try:
                    results[n] = fut.result()
                except Exception as e:
                    err = PlanExecutionError(f"encode of node {n} failed")
                    err.__cause__ = e
                    failed[n] = err
    wall = time.perf_counter() - t0
    if failed:
        first = next(n for n in order if n in failed)
        raise failed[first]
    return _finish(plan, results, wall, worker_count, timing)


def split_dataset(runs: Iterable[Tuple[RunResult, Dict[int, Sequence]]]):
    """Split-decision dataset from stand-alone runs (with their per-resolution
    sources), over the reference/target pairs the predictor serves."""
    ds = {}
    for run, seqs in runs:
        for ref, tgt in predictor_pairs(run.plan.ladder):
            a = run.nodes[tgt].analysis
            split_samples(seqs[tgt[0]].luma_stack(), a, run.nodes[ref].analysis, ds)
    return stack_dataset(ds)


# ------------------------------------------------------------ artefacts

def write_outputs(result: RunResult, out_dir: str):
    """<i>_<j>.tvc, <i>_<j>.amet and stats.json; file IO is outside the
    timed region."""
    os.makedirs(out_dir, exist_ok=True)
    for (i, j), r in sorted(result.nodes.items()):
        with open(os.path.join(out_dir, f"{i}_{j}.tvc"), "wb") as fh:
            fh.write(r.bitstream.data)
        with open(os.path.join(out_dir, f"{i}_{j}.amet"), "wb") as fh:
            fh.write(serialize(r.analysis))
    with open(os.path.join(out_dir, "stats.json"), "w") as fh:
        json.dump(result.to_json(), fh, indent=1)

"""Command line: encode one representation, run a ladder under a scheme,
train the split predictor, compute BD rates and aggregate reports."""

import argparse
import hashlib
import json
import os
import sys
from importlib import metadata

from .analysis import serialize
from .codec import EncoderConfig, encode_representation, solve_qp_for_bitrate
from .media import SYNTH_KINDS, Resolution, read_y4m, synthesize
from .metrics import SchemeRow, ladder_bd_rate, read_rdpoints, render_report, write_rdpoints
from .orchestrator import RunInputs, ladder_sequences, run_parallel, run_serial, split_dataset, write_outputs
from .schemes import Ladder, SchemeId, TrainParams, load_predictor, plan, save_predictor, train_predictor

DEFAULT_SYNTH = "checkerboard-pan:768x432:32"

# Frame sizes are rounded up to multiples of 8 where the nominal height is not.
PRESETS = {
    "desk": ((192, 112), (384, 216), (768, 432)),
    "paper-ladder": ((960, 544), (1920, 1080), (3840, 2160)),
}
_PAPER_RATES = ((0.5e6, 1.0e6, 1.5e6, 2.0e6), (3.0e6, 4.5e6, 5.8e6, 7.0e6), (11.6e6, 16.8e6, 20.0e6, 25.0e6))
PRESET_RATES = {
    "paper-ladder": _PAPER_RATES,
    "desk": tuple(tuple(b / 10 for b in r) for r in _PAPER_RATES),
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def version():
    try:
        return metadata.version("multienc")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ------------------------------------------------------------------ inputs

def parse_ladder(spec):
    """Preset name, or a file with one line per resolution "WxH: b1,b2,...". """
    if spec in PRESETS:
        res = tuple(Resolution(i, w, h) for i, (w, h) in enumerate(PRESETS[spec], 1))
        return Ladder(res, PRESET_RATES[spec])
    if not os.path.exists(spec):
        raise CliError("bad_ladder", f"unknown ladder preset or file {spec!r}")
    rows = []
    with open(spec) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            try:
                size, rates = line.split(":")
                w, h = (int(v) for v in size.lower().split("x"))
                rows.append(((w, h), tuple(float(b) for b in rates.split(","))))
            except ValueError:
                raise CliError("bad_ladder", f"{spec}:{ln}: expected 'WxH: b1,b2,...'") from None
    rows.sort(key=lambda r: r[0][0] * r[0][1])
    try:
        return Ladder(tuple(Resolution(i, w, h) for i, ((w, h), _) in enumerate(rows, 1)),
                      tuple(b for _, b in rows))
    except ValueError as e:
        raise CliError("bad_ladder", str(e)) from None


def parse_synth(spec, seed):
    """kind[:WxH[:frames]]"""
    parts = spec.split(":")
    kind = parts[0]
    if kind not in SYNTH_KINDS:
        raise CliError("bad_input", f"unknown synthetic kind {kind!r}; expected one of {', '.join(SYNTH_KINDS)}")
    w, h = (int(v) for v in parts[1].lower().split("x")) if len(parts) > 1 else (768, 432)
    n = int(parts[2]) if len(parts) > 2 else 32
    return synthesize(kind, w, h, n, seed)


def load_source(args):
    if args.input:
        try:
            with open(args.input, "rb") as fh:
                return read_y4m(fh)
        except OSError as e:
            raise CliError("bad_input", str(e)) from None
    return parse_synth(args.synth or DEFAULT_SYNTH, args.seed)


def source_id(args):
    if args.input:
        with open(args.input, "rb") as fh:
            return "sha256:" + hashlib.sha256(fh.read()).hexdigest()
    return f"synth:{args.synth or DEFAULT_SYNTH}:seed={args.seed}"


def solve_qps(ladder: Ladder, seqs, cfg: EncoderConfig):
    """Rate control per rung, sharing encodes between rungs of a resolution."""
    qps, memo = {}, {}
    for n in ladder.nodes():
        i = n[0]

        def rate(q, i=i):
            if (i, q) not in memo:
                memo[i, q] = encode_representation(seqs[i], cfg.with_qp(q)).stats.achieved_bitrate
            return memo[i, q]

        qps[n] = solve_qp_for_bitrate(seqs[i], ladder.bitrate(n), cfg, rate_of=rate).qp
    return qps


def write_manifest(out, command, args, extra=None):
    m = {"tool": "multienc", "version": version(), "command": command,
         "args": {k: v for k, v in vars(args).items() if k not in ("func", "out")},
         "seed": args.seed}
    m.update(extra or {})
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(m, fh, indent=1, sort_keys=True)


def _out(args):
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as e:
        raise CliError("bad_output", str(e)) from None
    if not os.access(args.out, os.W_OK):
        raise CliError("bad_output", f"output directory {args.out} is not writable")
    return args.out


# ---------------------------------------------------------------- commands

def cmd_encode(args):
    out = _out(args)
    seq = load_source(args)
    cfg = EncoderConfig(search_range=args.search_range)
    if args.bitrate:
        cfg = EncoderConfig(solve_qp_for_bitrate(seq, args.bitrate, cfg).qp, args.search_range,
                            target_bitrate=args.bitrate)
    elif args.qp is not None:
        cfg = cfg.with_qp(args.qp)
    r = encode_representation(seq, cfg)
    with open(os.path.join(out, "encode.tvc"), "wb") as fh:
        fh.write(r.bitstream.data)
    with open(os.path.join(out, "encode.amet"), "wb") as fh:
        fh.write(serialize(r.analysis))
    st = r.stats
    with open(os.path.join(out, "stats.json"), "w") as fh:
        json.dump({"qp": cfg.qp, "bits": st.total_bits, "achieved_bitrate": st.achieved_bitrate,
                   "psnr_y": st.psnr_y, "seconds": sum(st.frame_times),
                   "depth_visits": [int(v) for v in st.depth_visits]}, fh, indent=1)
    write_manifest(out, "encode", args, {"source": source_id(args), "qp": cfg.qp})
    print(f"qp {cfg.qp}  {st.achieved_bitrate:.0f} b/s  PSNR-Y {st.psnr_y:.2f} dB")


def cmd_ladder(args):
    try:
        scheme = SchemeId.parse(args.scheme)
    except ValueError as e:
        raise CliError("unknown_scheme", str(e)) from None
    predictor = None
    if scheme.uses_predictor:
        if not args.predictor:
            raise CliError("missing_predictor", f"scheme {scheme.value} needs --predictor <model.spm>")
        try:
            with open(args.predictor, "rb") as fh:
                predictor = load_predictor(fh.read())
        except (OSError, ValueError) as e:
            raise CliError("bad_predictor", str(e)) from None
    ladder = parse_ladder(args.ladder)
    out = _out(args)
    src = load_source(args)
    seqs = ladder_sequences(src, ladder)
    cfg = EncoderConfig(search_range=args.search_range)
    qps = {tuple(map(int, k.split("_"))): v for k, v in args.qps.items()} if args.qps else solve_qps(ladder, seqs, cfg)
    inputs = RunInputs(seqs, qps, cfg, predictor, reference_top=seqs[ladder.N])
    p = plan(scheme, ladder)
    res = run_parallel(p, args.workers, inputs) if args.parallel else run_serial(p, inputs)
    write_outputs(res, out)
    with open(os.path.join(out, "rdpoints.csv"), "w") as fh:
        write_rdpoints([(scheme.value, i, j, r.stats.achieved_bitrate, r.psnr_top)
                        for (i, j), r in sorted(res.nodes.items())], fh)
    args.qps = {f"{i}_{j}": q for (i, j), q in sorted(qps.items())}
    write_manifest(out, "ladder", args, {"source": source_id(args)})
    print(f"{scheme.label}: serial {res.serial_total:.3f} s, makespan {res.modelled_makespan:.3f} s, "
          f"violations {res.violations}")


def cmd_train(args):
    ladder = parse_ladder(args.ladder)
    cfg = EncoderConfig(search_range=args.search_range)
    runs = []
    specs = args.synth_list or [DEFAULT_SYNTH]
    for spec in specs:
        seqs = ladder_sequences(parse_synth(spec, args.seed), ladder)
        qps = solve_qps(ladder, seqs, cfg)
        runs.append((run_serial(plan(SchemeId.StandAlone, ladder), RunInputs(seqs, qps, cfg)), seqs))
    model = train_predictor(split_dataset(runs), TrainParams(seed=args.seed))
    data = save_predictor(model)
    d = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(d, exist_ok=True)
    with open(args.out, "wb") as fh:
        fh.write(data)
    with open(os.path.splitext(args.out)[0] + ".manifest.json", "w") as fh:
        json.dump({"tool": "multienc", "version": version(), "command": "train-predictor",
                   "args": {k: v for k, v in vars(args).items() if k != "func"}, "seed": args.seed},
                  fh, indent=1, sort_keys=True)
    for k, m in sorted({**model.buckets, **model.rejected}.items()):
        use = "used" if k in model.buckets else "left out"
        print(f"bucket {k}: n={m.samples} held-out acc {m.accuracy:.3f} (majority {m.baseline:.3f}) {use}")


def _points(path):
    with open(path) as fh:
        d = read_rdpoints(fh)
    if len(d) != 1:
        raise CliError("bad_rdpoints", f"{path} must hold exactly one scheme")
    return next(iter(d.values()))


def cmd_bdrate(args):
    a, b = _points(args.anchor), _points(args.test)
    res = sorted({i for i, _ in a} & {i for i, _ in b})
    if not res:
        raise CliError("bad_rdpoints", "no common resolutions")
    r = ladder_bd_rate(a, b, res)
    print(f"{r.bd_rate_percent:.2f}%")
    if not r.overlap_valid:
        print("warning: quality ranges do not fully overlap", file=sys.stderr)


def cmd_report(args):
    """Run directories share sources (manifest "source"); each source needs a
    StandAlone run, against which the other schemes are compared."""
    runs = {}
    for d in args.runs:
        try:
            with open(os.path.join(d, "stats.json")) as fh:
                st = json.load(fh)
            with open(os.path.join(d, "manifest.json")) as fh:
                src = json.load(fh).get("source", d)
            pts = _points(os.path.join(d, "rdpoints.csv"))
        except OSError as e:
            raise CliError("bad_run", str(e)) from None
        runs.setdefault(st["scheme"], {})[src] = (st, pts)
    base = runs.get(SchemeId.StandAlone.value)
    if not base:
        raise CliError("missing_baseline", "report needs at least one standalone run")
    rows = []
    for s in SchemeId:
        if s.value not in runs or s == SchemeId.StandAlone:
            continue
        ts, tp, bds = [], [], []
        for src, (st, pts) in sorted(runs[s.value].items()):
            if src not in base:
                raise CliError("missing_baseline", f"no standalone run for source {src}")
            bst, bpts = base[src]
            ts.append(100 * (1 - st["serial_total"] / bst["serial_total"]))
            tp.append(100 * (1 - st["modelled_makespan"] / bst["modelled_makespan"]))
            bds.append(ladder_bd_rate(bpts, pts, sorted({i for i, _ in bpts})).bd_rate_percent)
        n = len(ts)
        rows.append(SchemeRow(s.label, sum(ts) / n, sum(tp) / n, sum(bds) / n))
    if not rows:
        raise CliError("no_schemes", "report needs at least one non-standalone run")
    md, csv_text = render_report(rows)
    out = _out(args)
    with open(os.path.join(out, "report.md"), "w") as fh:
        fh.write(md)
    with open(os.path.join(out, "report.csv"), "w") as fh:
        fh.write(csv_text)
    print(md)


def cmd_rerun(args):
    """Repeat a ladder or encode run from its manifest into a new directory."""
    with open(args.manifest) as fh:
        m = json.load(fh)
    if m.get("command") not in ("ladder", "encode"):
        raise CliError("bad_manifest", "only ladder and encode manifests can be rerun")
    ns = argparse.Namespace(**m["args"])
    ns.out = args.out
    (cmd_ladder if m["command"] == "ladder" else cmd_encode)(ns)


# -------------------------------------------------------------------- main

def _source_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--input", help="Y4M file (8-bit 4:2:0)")
    g.add_argument("--synth", help=f"synthetic source kind[:WxH[:frames]], default {DEFAULT_SYNTH}")


def build_parser():
    ap = argparse.ArgumentParser(prog="multienc")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode one stand-alone representation")
    _source_flags(p)
    p.add_argument("--qp", type=int)
    p.add_argument("--bitrate", type=float, help="target bits/second (rate control picks the QP)")
    p.add_argument("--search-range", type=int, default=4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("ladder", help="encode a ladder under one scheme")
    _source_flags(p)
    p.add_argument("--scheme", default="standalone")
    p.add_argument("--ladder", default="desk")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--predictor")
    p.add_argument("--search-range", type=int, default=4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_ladder, qps=None)

    p = sub.add_parser("train-predictor", help="fit the split predictor on stand-alone encodes")
    p.add_argument("--synth", dest="synth_list", action="append",
                   help="synthetic training source (repeatable)")
    p.add_argument("--ladder", default="desk")
    p.add_argument("--search-range", type=int, default=4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="model.spm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bdrate", help="BD rate of test against anchor rdpoints.csv")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(func=cmd_bdrate, seed=1)

    p = sub.add_parser("report", help="aggregate ladder run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report, seed=1)

    p = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun, seed=1)
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as e:
        print("error: " + json.dumps({"code": e.code, "message": str(e)}), file=sys.stderr)
        return 2
    except ValueError as e:
        print("error: " + json.dumps({"code": "invalid", "message": str(e)}), file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())

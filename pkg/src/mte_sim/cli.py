"""Command-line front end: run suites across profiles, dump and verify traces."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import oracle
from .errors import MteError, UsageError
from .kernels import BASELINE, PROFILES, get_profile, random_operands, run_conv, run_gemm
from .machine import env_overrides
from .workloads import ConvLayer, GemmWorkload, category, load_suite

DEFAULT_SEED = 20240601
DEFAULT_VERIFY_LIMIT = 8_000_000  # flops; larger workloads are priced without data
TRACE_MAGIC = "# mte-sim trace v1"

CSV_COLUMNS = [
    "name", "category", "profile", "M", "N", "K", "retired_mma", "retired_vector",
    "retired_mem", "retired_config", "cycles", "gflops_equiv", "efficiency", "verified",
    "reduction",
]


def resolve_profile(name):
    try:
        profile = get_profile(name)
    except MteError as exc:
        raise UsageError(str(exc)) from None
    return dataclasses.replace(profile, cfg=env_overrides(profile.cfg))


def parse_profiles(text):
    names = [p.strip() for p in (text or "").split(",") if p.strip()]
    if not names:
        raise UsageError("at least one profile is required")
    for n in names:
        resolve_profile(n)
    return names


def _rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _bitwise_equal(x, y):
    return np.array_equal(np.asarray(x, np.float32).view(np.uint32), np.asarray(y, np.float32).view(np.uint32))


def _scalars(rng):
    return float(np.float32(rng.standard_normal())), float(np.float32(rng.standard_normal()))


def evaluate(entry, profile_name, seed, verify_limit, elide_post=False):
    """One report row for a suite entry on a profile."""
    profile = resolve_profile(profile_name)
    wl = entry.gemm
    rng = _rng(seed, entry.name)
    alpha, beta = _scalars(rng)
    if wl.flops > verify_limit:
        res = run_gemm(profile, wl, alpha=alpha, beta=beta, dry=True, elide_post=elide_post)
        verified = "skipped"
    elif isinstance(entry.workload, ConvLayer) and wl.sew_i == 32:
        layer = entry.workload
        x = rng.standard_normal((layer.minibatch, layer.in_channels, layer.in_h, layer.in_w)).astype(np.float32)
        w = rng.standard_normal((layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)).astype(np.float32)
        c = rng.standard_normal((layer.minibatch, layer.out_channels, layer.out_h, layer.out_w)).astype(np.float32)
        res, out = run_conv(profile, layer, x, w, c, alpha, beta, elide_post=elide_post)
        ref = oracle.oracle_conv(layer, x, w, c, alpha, beta)
        verified = "true" if _bitwise_equal(out, ref) else "false"
    else:
        a, b, c = random_operands(rng, wl)
        res = run_gemm(profile, wl, a, b, c, alpha, beta, elide_post=elide_post)
        ref = oracle.oracle_gemm(a, b.T if wl.b_transposed else b, c, alpha, beta, sew_i=wl.sew_i)
        verified = "true" if _bitwise_equal(res.output, ref) else "false"
    rep = res.report
    return {
        "name": entry.name,
        "category": entry.category,
        "profile": profile.name,
        "M": wl.M,
        "N": wl.N,
        "K": wl.K,
        "retired_mma": res.retired("mma"),
        "retired_vector": res.retired("vector_arith"),
        "retired_mem": res.retired("vector_memory", "tile_load", "tile_store"),
        "retired_config": res.retired("config"),
        "cycles": rep.total_cycles,
        "gflops_equiv": round(rep.gflops, 3),
        "efficiency": round(rep.efficiency, 6),
        "verified": verified,
        "_vm_retired": res.vector_matrix_retired,
    }


def _evaluate_star(args):
    return evaluate(*args)


def _baseline_count(entry, elide_post):
    res = run_gemm(resolve_profile(BASELINE), entry.gemm, dry=True, elide_post=elide_post)
    return res.vector_matrix_retired


def cmd_run(suite_path, profiles, out_path=None, fmt="csv", seed=DEFAULT_SEED,
            verify_limit=DEFAULT_VERIFY_LIMIT, jobs=1, elide_post=False):
    """Evaluate every (workload, profile) pair; returns the list of row dicts."""
    if fmt not in ("csv", "json"):
        raise UsageError(f"unknown format {fmt!r}")
    entries = load_suite(suite_path)
    tasks = [(e, p, seed, verify_limit, elide_post) for e in entries for p in profiles]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate_star, tasks))
    else:
        rows = [evaluate(*t) for t in tasks]
    baseline = {}
    for row, (entry, *_rest) in zip(rows, tasks):
        if row["profile"] == BASELINE:
            baseline[entry.name] = row["_vm_retired"]
        elif entry.name not in baseline:
            baseline[entry.name] = _baseline_count(entry, elide_post)
        row["reduction"] = round(baseline[entry.name] / row.pop("_vm_retired"), 4)
    text = render(rows, fmt)
    if out_path:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return rows


def render(rows, fmt):
    if fmt == "json":
        return json.dumps([{k: r[k] for k in CSV_COLUMNS} for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in CSV_COLUMNS})
    return buf.getvalue()


# -- traces ------------------------------------------------------------------------

def _workload_fields(wl):
    return (f"name={wl.name} M={wl.M} N={wl.N} K={wl.K} sew_i={wl.sew_i} sew_o={wl.sew_o} "
            f"layout={wl.layout} b_transposed={int(wl.b_transposed)}")


def trace_text(workload, profile_name, seed=DEFAULT_SEED, elide_post=False):
    """Full trace file contents: header plus one line per instruction."""
    profile = resolve_profile(profile_name)
    alpha, beta = _scalars(_rng(seed, workload.name))
    res = run_gemm(profile, workload, alpha=alpha, beta=beta, dry=True, keep_trace=True,
                   elide_post=elide_post)
    cfg = profile.cfg
    header = [
        TRACE_MAGIC,
        f"# profile: {profile.name}",
        f"# machine: vlen={cfg.vlen_bits} rlen={cfg.rlen_bits} vregs={cfg.num_arch_vregs} "
        f"backend={cfg.backend.value} issue_width={cfg.issue_width}",
        f"# workload: {_workload_fields(workload)}",
        f"# plan: {res.plan}",
        f"# seed: {seed}",
        f"# elide_post: {int(elide_post)}",
    ]
    header += [f"# note: {n}" for n in res.notes]
    return "\n".join(header + res.trace) + "\n"


def cmd_trace(workload, profile_name, out_path=None, seed=DEFAULT_SEED, elide_post=False):
    text = trace_text(workload, profile_name, seed, elide_post)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def _parse_trace_header(text):
    lines = text.splitlines()
    if not lines or lines[0] != TRACE_MAGIC:
        raise UsageError("not an mte-sim trace file")
    fields = {}
    for line in lines[1:]:
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(": ")
        fields.setdefault(key, value)
    try:
        kv = dict(tok.split("=", 1) for tok in fields["workload"].split())
        wl = GemmWorkload(
            int(kv["M"]), int(kv["N"]), int(kv["K"]), sew_i=int(kv["sew_i"]), sew_o=int(kv["sew_o"]),
            layout=kv["layout"], b_transposed=kv["b_transposed"] == "1", name=kv["name"],
        )
        return wl, fields["profile"], int(fields["seed"]), fields.get("elide_post") == "1"
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed trace header: {exc}") from None


def verify_trace(path):
    """True when regenerating the trace from its header reproduces the file byte for byte."""
    with open(path) as fh:
        text = fh.read()
    wl, profile, seed, elide = _parse_trace_header(text)
    return trace_text(wl, profile, seed, elide) == text


def verify_random(profiles, count, seed, out=None):
    """Random oracle checks; returns the number of mismatches."""
    out = out or sys.stdout
    rng = np.random.default_rng(seed)
    failures = 0
    for name in profiles:
        profile = resolve_profile(name)
        for sew_i in (32, 16):
            bad = 0
            for _ in range(count):
                m, n, k = (int(v) for v in rng.integers(1, 65, size=3))
                wl = GemmWorkload(m, n, k, sew_i=sew_i)
                a, b, c = random_operands(rng, wl)
                alpha, beta = _scalars(rng)
                res = run_gemm(profile, wl, a, b, c, alpha, beta)
                if not _bitwise_equal(res.output, oracle.oracle_gemm(a, b, c, alpha, beta, sew_i=sew_i)):
                    bad += 1
            kind = "fp32" if sew_i == 32 else "bf16->fp32"
            print(f"{name:10s} {kind:11s} {count - bad}/{count} bitwise equal", file=out)
            failures += bad
    return failures


def list_profiles(out=None):
    out = out or sys.stdout
    print(f"{'name':10s} {'kernel':7s} {'vlen':>6s} {'rlen':>5s} {'vregs':>5s} {'backend':13s} "
          f"{'vpus':>4s} {'mma(s,d)':>9s}  description", file=out)
    for p in PROFILES.values():
        cfg = resolve_profile(p.name).cfg
        mma = cfg.cost_table.get("mma")
        mma_s = f"{mma[0]},{mma[1]}" if mma else "-"
        print(f"{p.name:10s} {p.kernel:7s} {cfg.vlen_bits:6d} {cfg.rlen_bits:5d} {cfg.num_arch_vregs:5d} "
              f"{cfg.backend.value:13s} {cfg.num_vector_units:4d} {mma_s:>9s}  {p.description}", file=out)


# -- argument parsing ------------------------------------------------------------------

def _gemm_arg(text):
    try:
        m, n, k = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected M,N,K") from None
    return m, n, k


def build_parser():
    parser = argparse.ArgumentParser(prog="mte-sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate a workload suite across profiles")
    run.add_argument("suite", nargs="?", help="suite file (default: bundled DNN suite)")
    run.add_argument("--profiles", default=",".join(PROFILES), help="comma-separated profile names")
    run.add_argument("--out", help="output path (default: stdout)")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--seed", type=int, default=DEFAULT_SEED)
    run.add_argument("--verify-limit", type=float, default=DEFAULT_VERIFY_LIMIT,
                     help="largest workload (in flops) run functionally and checked against the oracle")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--elide-post", action="store_true", help="skip alpha/beta ops when alpha=1, beta=0")

    tr = sub.add_parser("trace", help="dump the instruction trace of one workload")
    tr.add_argument("--profile", required=True)
    src = tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--gemm", type=_gemm_arg, metavar="M,N,K")
    src.add_argument("--workload", help="workload name from --suite")
    tr.add_argument("--suite", help="suite file for --workload (default: bundled)")
    tr.add_argument("--sew-i", type=int, default=32, choices=(16, 32))
    tr.add_argument("--out")
    tr.add_argument("--seed", type=int, default=DEFAULT_SEED)
    tr.add_argument("--elide-post", action="store_true")

    ver = sub.add_parser("verify", help="check kernels against the oracle, or a trace against regeneration")
    ver.add_argument("--trace", help="trace file to regenerate and compare")
    ver.add_argument("--profiles", default=",".join(PROFILES))
    ver.add_argument("--count", type=int, default=20, help="random GEMMs per profile and precision")
    ver.add_argument("--seed", type=int, default=DEFAULT_SEED)

    sub.add_parser("list-profiles", help="show the built-in machine profiles")
    return parser


def _find_workload(name, suite):
    for entry in load_suite(suite):
        if entry.name == name:
            return entry.gemm
    raise UsageError(f"workload {name!r} not found in suite")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            rows = cmd_run(args.suite, parse_profiles(args.profiles), args.out, args.format,
                           args.seed, args.verify_limit, args.jobs, args.elide_post)
            return 1 if any(r["verified"] == "false" for r in rows) else 0
        if args.command == "trace":
            if args.gemm:
                m, n, k = args.gemm
                wl = GemmWorkload(m, n, k, sew_i=args.sew_i, name=f"gemm_{m}x{n}x{k}")
            else:
                wl = _find_workload(args.workload, args.suite)
            cmd_trace(wl, resolve_profile(args.profile).name, args.out, args.seed, args.elide_post)
            return 0
        if args.command == "verify":
            if args.trace:
                ok = verify_trace(args.trace)
                print("trace reproduces" if ok else "trace differs from regeneration")
                return 0 if ok else 1
            return 1 if verify_random(parse_profiles(args.profiles), args.count, args.seed) else 0
        list_profiles()
        return 0
    except MteError as exc:
        print(f"mte-sim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

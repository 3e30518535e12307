"""Command-line entry point: ``uma-stream <subcommand>``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bench, frontend, latency
from .engine import (
    Model,
    StreamHandle,
    Trace,
    format_emission_log,
    offline_recognize,
    parse_emission_log,
)
from .lookahead import kernel_for_lookahead_ms
from .selftest import run_selftest
from .uma import segment_offline, write_alpha_csv
from .weights import (
    ConfigError,
    ModelConfig,
    WeightFormatError,
    encoder_block_param_count,
    init_random,
    load_bundle_file,
    save_bundle_file,
)


class CliError(Exception):
    pass


def resolve_seed(seed: int) -> int:
    env = os.environ.get("UMA_STREAM_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise CliError(f"UMA_STREAM_SEED must be an integer, got {env!r}") from None


def _load_config(args) -> ModelConfig:
    if args.config is None:
        cfg = ModelConfig()
    else:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            cfg = ModelConfig.load(path)
        except ConfigError as exc:
            raise CliError(f"{path}: {exc}") from None
    if getattr(args, "lookahead_ms", None) is not None:
        try:
            k = kernel_for_lookahead_ms(args.lookahead_ms, cfg.frame_shift_ms)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        cfg = cfg.replace(lookahead_kernel=k)
    if getattr(args, "et", None) is not None:
        cfg = cfg.replace(et_enabled=args.et)
    return cfg


def _load_bundle(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"bundle file not found: {path}")
    try:
        return load_bundle_file(path)
    except WeightFormatError as exc:
        raise CliError(f"{path}: {exc}") from None


def _read_audio(path: Path, fmt: str):
    if not path.is_file():
        raise CliError(f"input file not found: {path}")
    try:
        return frontend.read_wav(path) if fmt == "wav" else frontend.read_f32(path)
    except (ValueError, EOFError) as exc:
        raise CliError(f"{path}: {exc}") from None


_WORKER_MODEL = None


def _init_worker(config, bundle_path):
    global _WORKER_MODEL
    _WORKER_MODEL = Model.from_bundle(config, load_bundle_file(bundle_path))


def _recognize_one(job):
    path, fmt, mode, dump = job
    model = _WORKER_MODEL
    utt = Path(path).stem
    feats = frontend.fbank(_read_audio(Path(path), fmt))
    if mode == "stream":
        h = StreamHandle(model, trace=dump is not None)
        emissions = [e for f in feats for e in h.push_frame(f)] + h.finalize()
        alpha_rows = h.trace.uma if h.trace else None
    else:
        trace = Trace() if dump is not None else None
        emissions = offline_recognize(feats, model, trace=trace)
        alpha_rows = None
        if trace is not None:
            events = {ev.frame_index: ev.kind.value
                      for ev in segment_offline(trace.alphas, trace.lookahead)}
            alpha_rows = [(t, a, events.get(t, "")) for t, a in enumerate(trace.alphas)]
    if dump is not None:
        write_alpha_csv(dump, alpha_rows)
    return format_emission_log(utt, emissions)


def cmd_recognize(args) -> int:
    config = _load_config(args)
    bundle = _load_bundle(args.bundle)
    try:
        Model.from_bundle(config, bundle)
    except WeightFormatError as exc:
        raise CliError(f"{args.bundle} does not match the config: {exc}") from None
    inputs = [Path(p) for p in args.inputs]
    for p in inputs:
        if not p.is_file():
            raise CliError(f"input file not found: {p}")
    dumps = [None] * len(inputs)
    if args.dump_alpha:
        base = Path(args.dump_alpha)
        if len(inputs) == 1:
            dumps = [base]
        else:
            dumps = [base.with_name(f"{base.stem}.{p.stem}{base.suffix or '.csv'}") for p in inputs]
    jobs = [(str(p), args.input_format, args.mode, d) for p, d in zip(inputs, dumps)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs, initializer=_init_worker,
                                 initargs=(config, args.bundle)) as pool:
            logs = list(pool.map(_recognize_one, jobs))
    else:
        _init_worker(config, args.bundle)
        logs = [_recognize_one(j) for j in jobs]
    _write_out(args.out, "".join(logs))
    return 0


def cmd_init_weights(args) -> int:
    config = _load_config(args)
    seed = resolve_seed(args.seed)
    n = save_bundle_file(init_random(config, seed), args.out)
    print(f"wrote {n} bytes to {args.out} (seed={seed})", file=sys.stderr)
    return 0


def cmd_bench_scaling(args) -> int:
    seed = resolve_seed(args.seed)
    try:
        lengths = [int(x) for x in args.lengths.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"--lengths must be comma-separated integers, got {args.lengths!r}") from None
    if not lengths or min(lengths) < 1:
        raise CliError("--lengths needs at least one positive length")
    rows = bench.bench_scaling(lengths, reps=args.reps, seed=seed)
    _write_out(args.out, bench.format_csv(rows, seed))
    return 0


def cmd_simulate_latency(args) -> int:
    for p in (args.emissions, args.alignments):
        if not Path(p).is_file():
            raise CliError(f"file not found: {p}")
    emissions = parse_emission_log(Path(args.emissions).read_text(encoding="utf-8"))
    truths = latency.read_alignments_csv(Path(args.alignments).read_text(encoding="utf-8"))
    times = {u: [ms for _, _, ms in toks] for u, toks in emissions.items()}
    if args.chunk_ms:
        times = {u: latency.chunk_timestamp_rule(ts, args.chunk_ms) for u, ts in times.items()}
    try:
        report = latency.compute_latency(times, truths, args.outlier_fraction, args.exclusion)
    except latency.EmptyReportError as exc:
        raise CliError(str(exc)) from None
    _write_out(args.out, report.to_json() + "\n")
    return 0


def cmd_inspect_weights(args) -> int:
    bundle = _load_bundle(args.bundle)
    total = 0
    for name, arr in bundle.items():
        total += arr.size
        print(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}\t{arr.size}")
    print(f"# tensors={len(bundle)} params={total}")
    if args.config:
        cfg = _load_config(args)
        target = 3 * cfg.expansion * cfg.model_dim ** 2
        for i in range(cfg.num_encoder_blocks):
            p = encoder_block_param_count(bundle, i)
            print(f"# enc.{i} params={p} 3ED^2={target} rel_err={(p - target) / target:+.3f}")
    return 0


def cmd_selftest(args) -> int:
    ok = run_selftest(args.filter, resolve_seed(args.seed), args.bundle)
    return 0 if ok else 1


def _write_out(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uma-stream", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p):
        p.add_argument("--config", help="key=value model config file (default: built-in)")
        p.add_argument("--lookahead-ms", type=int, help="lookahead in ms, multiple of the frame shift")

    p = sub.add_parser("recognize", help="run recognition and print the emission log")
    model_flags(p)
    p.add_argument("--bundle", required=True, help=".umaw weight file")
    p.add_argument("inputs", nargs="+", help="audio files (16 kHz mono)")
    p.add_argument("--input-format", choices=["wav", "f32"], default="wav")
    p.add_argument("--mode", choices=["stream", "offline"], default="stream")
    p.add_argument("--et", dest="et", action="store_true", default=None, help="enable early termination")
    p.add_argument("--no-et", dest="et", action="store_false")
    p.add_argument("--dump-alpha", help="write frame_index,alpha,event CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("init-weights", help="write deterministic random weights")
    model_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("bench-scaling", help="time the selective scan against naive attention")
    p.add_argument("--lengths", default="1024,2048,4096,8192")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_scaling)

    p = sub.add_parser("simulate-latency", help="FT/LT/Avg latency from an emission log")
    p.add_argument("--emissions", required=True)
    p.add_argument("--alignments", required=True, help="CSV utt_id,token_index,end_ms")
    p.add_argument("--outlier-fraction", type=float, default=0.10)
    p.add_argument("--exclusion", choices=["pooled", "per_measure"], default="pooled")
    p.add_argument("--chunk-ms", type=int, default=0, help="snap emission times to chunk ends")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate_latency)

    p = sub.add_parser("inspect-weights", help="list bundle tensors and block sizes")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_inspect_weights)

    p = sub.add_parser("selftest", help="run the oracle suites")
    p.add_argument("--filter")
    p.add_argument("--bundle", help="also check that this bundle loads")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

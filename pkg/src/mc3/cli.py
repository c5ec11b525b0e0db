"""Command-line front end: ``mc3 {transmit,receive,simulate,sweep,calibrate,analyze}``."""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from .bitstream import Bitstream, bit_error_rate, encode_text, parse_pattern
from .config import SweepSpec, load_sweep, parse_skew, parse_sweep_value, resolve_scenario, scenario_names, seed_from_env
from .errors import ConfigError, MC3Error
from .evaluation import (
    analyze_trace,
    export_trace,
    format_trace,
    import_trace,
    run_experiment,
    run_sweep,
    write_sweep_outputs,
)
from .kernel import KernelConfig, NativeKernel, SimulatedKernel, mc_utilization
from .timing import (
    Contender,
    ErrorSummary,
    PreciseTimer,
    calibrate,
    check_monotonic_clock,
    drive,
    format_error_table,
    precise_sleep,
)
from .txrx import TransmitLog, normalize_mode, receive, transmit
from .units import format_size, parse_duration, parse_rate, parse_size

TXLOG_HEADER = "mc3-txlog v1"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--config", "--scenario", dest="config", required=required, help=f"scenario file or preset ({', '.join(scenario_names())})")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--seed", type=int, help="seed (default: MC3_SEED, then the config)")


def build_parser() -> Parser:
    parser = Parser(prog="mc3", description="Memory-contention covert channel toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("transmit", help="run the transmitter on this machine")
    _add_config(p, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--pattern", help="bit pattern, e.g. balanced:1024 or alternating:8")
    g.add_argument("--message", help="text message to send")
    p.add_argument("--now", action="store_true", help="start after --lead instead of the configured start_epoch")
    p.add_argument("--lead", default="1s", help="delay before the start epoch with --now")
    p.add_argument("--log", default="transmit.log", help="transmit log output path")

    p = sub.add_parser("receive", help="run the receiver on this machine")
    _add_config(p, required=True)
    p.add_argument("--epochs", type=int, help="number of message epochs (default: pattern length x R)")
    p.add_argument("--now", action="store_true", help="start after --lead instead of the configured start_epoch")
    p.add_argument("--lead", default="1s", help="delay before the start epoch with --now")
    p.add_argument("--trace", default="receive.trace", help="trace output path")
    p.add_argument("--bits-out", default="received.bits", help="decoded bits output path")

    p = sub.add_parser("simulate", help="co-simulate transmitter and receiver")
    _add_config(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--bits", help="bit pattern (overrides the scenario's)")
    g.add_argument("--message", help="text message to send")
    p.add_argument("--skew", help="receiver clock lag, e.g. 40us or 0.4T")
    p.add_argument("--trace", help="write the receiver trace here")
    p.add_argument("--report", help="write the report here")
    p.add_argument("--bits-out", help="write the decoded bits here")

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("--spec", help="sweep file (mc3-sweep v1)")
    _add_config(p)
    p.add_argument("--param", help="parameter to sweep when no --spec is given")
    p.add_argument("--values", help="comma-separated values when no --spec is given")
    p.add_argument("--reps", type=int, default=1, help="repetitions per value")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--out", default="sweep-out", help="output directory")

    p = sub.add_parser("calibrate", help="measure peak bandwidth and timer error statistics")
    p.add_argument("--sleep-trials", type=int, default=100)
    p.add_argument("--duration", default="100ms", help="requested sleep duration per trial")
    p.add_argument("--contend-trials", type=int, default=5)
    p.add_argument("--contend-duration", default="10ms")
    p.add_argument("--buffer", default="64MiB", help="contention buffer size")
    p.add_argument("--warmup", default="1s", help="bandwidth calibration warm-up")
    p.add_argument("--probe", default="0.5s", help="utilisation probe duration")
    p.add_argument("--peak", help="reference peak bandwidth, e.g. 204.8GB/s (default: measured)")
    p.add_argument("--backend", choices=("native", "sim"), default="native")
    p.add_argument("--scenario", default="noiseless", help="scenario for the sim backend")

    p = sub.add_parser("analyze", help="re-decode a stored trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--gamma", default="auto", help="threshold in bytes/s, or auto")
    p.add_argument("--gamma-factor", type=float, default=2.0)
    p.add_argument("--mode", default="standard_hysteresis", help="standard_hysteresis (standard) or paper_verbatim (verbatim)")
    p.add_argument("--epochs-per-bit", "-R", type=int, default=1)
    p.add_argument("--bits-out", help="write the decoded bits here")
    p.add_argument("--expect", help="bit pattern to score against")
    return parser


def _scenario(args):
    sc = resolve_scenario(args.config or "noiseless", args.overrides)
    seed = seed_from_env(sc.seed)
    if args.seed is not None:
        seed = args.seed
    return sc.with_seed(seed)


def _payload(sc, pattern: str | None, message: str | None) -> Bitstream:
    if message is not None:
        return encode_text(message)
    if pattern is not None:
        return parse_pattern(pattern, default_seed=sc.seed)
    return sc.bits()


def _check_writable(*paths) -> None:
    for p in paths:
        if p is None:
            continue
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise OSError(f"cannot write {p}: directory {parent} does not exist")


def format_txlog(log: TransmitLog) -> str:
    lines = [TXLOG_HEADER, f"# start_epoch={log.start_epoch!r} bit_interval={log.bit_interval!r} calibration_bw={log.calibration_bandwidth!r}"]
    lines.append("# index bit start end bytes bandwidth")
    for b in log.bits:
        lines.append(f"{b.index} {b.bit} {b.start!r} {b.end!r} {b.bytes_moved} {b.bandwidth!r}")
    return "\n".join(lines) + "\n"


def _local_start(start_wall: float, timer: PreciseTimer) -> float:
    return timer.now() + (start_wall - time.time())


def cmd_transmit(args) -> int:
    sc = _scenario(args)
    bits = _payload(sc, args.pattern, args.message)
    cfg = sc.channel
    _check_writable(args.log)
    if not args.now and cfg.start_epoch is None:
        raise ConfigError("config has no start_epoch; set channel.start_epoch or pass --now")
    timer = PreciseTimer(cfg.spin_threshold)
    kernel = NativeKernel(KernelConfig(cfg.tx_buffer_size), timer=timer)
    if args.now:
        start_wall = time.time() + parse_duration(args.lead) + cfg.calibration_warmup
    else:
        start_wall = cfg.start_epoch
    log = transmit(bits, replace(cfg, start_epoch=_local_start(start_wall, timer)), kernel, timer)
    Path(args.log).write_text(format_txlog(log))
    print(f"sent {len(bits)} bits ({bits.ones()} ones) starting at {start_wall:.6f}; log: {args.log}")
    return 0


def cmd_receive(args) -> int:
    sc = _scenario(args)
    cfg = sc.channel
    n_epochs = args.epochs if args.epochs is not None else len(sc.bits()) * cfg.epochs_per_bit
    if n_epochs < 0:
        raise ConfigError("--epochs must be >= 0")
    _check_writable(args.trace, args.bits_out)
    samples = []
    if n_epochs:
        if not args.now and cfg.start_epoch is None:
            raise ConfigError("config has no start_epoch; set channel.start_epoch or pass --now")
        timer = PreciseTimer(cfg.spin_threshold)
        kernel = NativeKernel(KernelConfig(cfg.rx_buffer_size), timer=timer)
        if args.now:
            start_wall = time.time() + parse_duration(args.lead) + cfg.calibration_warmup + cfg.rx_early_start
        else:
            start_wall = cfg.start_epoch
        samples = receive(n_epochs, replace(cfg, start_epoch=_local_start(start_wall, timer)), kernel, timer)
    Path(args.trace).write_text(format_trace(samples))
    if samples:
        from .txrx import decode_trace, resolve_gamma

        gamma = resolve_gamma(samples, cfg)
        bits = decode_trace(samples, gamma, cfg.decoder_mode, cfg.epochs_per_bit)
        mean_bw = sum(s.raw_bandwidth for s in samples) / len(samples)
    else:
        gamma, bits, mean_bw = cfg.hysteresis_threshold or 0.0, Bitstream(), 0.0
    Path(args.bits_out).write_text(str(bits) + "\n")
    print(f"epochs={len(samples)} mean_bw={mean_bw / 1e9:.3f} GB/s gamma={gamma:.6g} bits={len(bits)}")
    return 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    if args.bits is not None:
        sc = replace(sc, pattern=args.bits)
    elif args.message is not None:
        sc = replace(sc, pattern="text:" + args.message)
    if args.skew is not None:
        sc = replace(sc, skew=parse_skew(args.skew, sc.channel.epoch_interval))
    _check_writable(args.trace, args.report, args.bits_out)
    report, result = run_experiment(sc)
    text = report.summary()
    print(f"scenario={sc.name} seed={sc.seed} skew={sc.skew!r}")
    print(text)
    if args.trace:
        export_trace(result.samples, args.trace)
    if args.report:
        Path(args.report).write_text(f"scenario={sc.name}\nseed={sc.seed}\n" + text.replace(" ", "\n") + "\n")
    if args.bits_out:
        Path(args.bits_out).write_text(str(result.received) + "\n")
    return 0


def cmd_sweep(args) -> int:
    if args.spec:
        spec = load_sweep(args.spec, args.overrides)
        if args.seed is not None or seed_from_env(spec.scenario.seed) != spec.scenario.seed:
            seed = args.seed if args.seed is not None else seed_from_env(spec.scenario.seed)
            spec = replace(spec, scenario=spec.scenario.with_seed(seed))
    else:
        if not args.param or not args.values:
            raise UsageError("sweep needs --spec, or --param and --values")
        sc = _scenario(args)
        values = [parse_sweep_value(args.param, v, sc.channel.epoch_interval) for v in args.values.split(",") if v.strip()]
        spec = SweepSpec(args.param, values, args.reps, sc)
    result = run_sweep(spec, args.workers)
    files = write_sweep_outputs(result, args.out)
    for a in result.aggregate():
        print(f"{spec.parameter}={a['value']} runs={a['runs']} accuracy={a['accuracy_mean']:.6f}+-{a['accuracy_std']:.6f} capacity={a['capacity_mean']:.1f}")
    failed = [r for r in result.rows if r.report is None]
    for r in failed:
        print(f"point {r.point} rep {r.repetition} failed: {r.error}", file=sys.stderr)
    print("wrote " + ", ".join(str(f) for f in files))
    return 2 if failed and len(failed) == len(result.rows) else 0


def cmd_calibrate(args) -> int:
    duration = parse_duration(args.duration)
    contend_duration = parse_duration(args.contend_duration)
    buffer = parse_size(args.buffer)
    warmup = parse_duration(args.warmup)
    if args.sleep_trials < 1 or args.contend_trials < 0:
        raise UsageError("--sleep-trials must be >= 1 and --contend-trials >= 0")
    rows = []
    if args.backend == "native":
        check_monotonic_clock()
        timer = PreciseTimer()
        kernel = NativeKernel(KernelConfig(buffer), timer=timer)
        sleeps = [precise_sleep(duration) for _ in range(args.sleep_trials)]
        rows.append(ErrorSummary.of("sleep", sleeps))
    else:
        sc = resolve_scenario(args.scenario)
        model = sc.build_model()
        rx = next(a.name for a in model.actors.values() if a.role == "receiver")
        kernel = SimulatedKernel(model, rx, KernelConfig(buffer))
        timer = kernel.timer
        sleeps = [timer.sleep_for(duration) for _ in range(args.sleep_trials)]
        rows.append(ErrorSummary.of("sleep", sleeps))
    beta = calibrate(kernel, warmup, timer)
    peak = parse_rate(args.peak) if args.peak else (kernel.peak_bandwidth or beta)
    if args.contend_trials:
        contender = Contender(beta, alignment=kernel.config.alignment)
        stats = [drive(contender.contend_for(contend_duration), kernel, timer).stats for _ in range(args.contend_trials)]
        rows.append(ErrorSummary.of("contend_for", stats))
    util = mc_utilization(kernel, parse_duration(args.probe), peak)
    print(f"backend={args.backend} buffer={format_size(buffer)} calibrated_bw={beta / 1e9:.3f} GB/s peak_ref={peak / 1e9:.3f} GB/s utilization={util:.3f}")
    meta = kernel.metadata
    print("kernel: " + " ".join(f"{k}={v}" for k, v in meta.items()))
    print(format_error_table(rows))
    return 0


def cmd_analyze(args) -> int:
    samples = import_trace(args.trace)
    gamma = None if args.gamma.strip().lower() == "auto" else parse_rate(args.gamma)
    mode = normalize_mode(args.mode)
    bits, used = analyze_trace(samples, gamma, mode, args.epochs_per_bit, args.gamma_factor)
    print(f"epochs={len(samples)} gamma={used!r} mode={mode} R={args.epochs_per_bit} bits={len(bits)}")
    print(str(bits))
    if args.expect:
        expected = parse_pattern(args.expect)
        n = min(len(expected), len(bits))
        print(f"ber={bit_error_rate(expected[:n], bits[:n]):.6f} over {n} bits")
    if args.bits_out:
        Path(args.bits_out).write_text(str(bits) + "\n")
    return 0


COMMANDS = {
    "transmit": cmd_transmit,
    "receive": cmd_receive,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "analyze": cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mc3: error: {exc}", file=sys.stderr)
        return 1
    except (MC3Error, OSError, ValueError, KeyError) as exc:
        print(f"mc3 {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

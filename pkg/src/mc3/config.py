"""Scenario and sweep definitions, presets, and their plain-text file formats.

A scenario file is an INI document preceded by a version line::

    mc3-config v1
    [channel]
    epoch_interval = 156.25us
    epochs_per_bit = 2
    tx_buffer_size = 2MiB
    [model]
    preset = orin-agx-like
    slowdown_curve = 0:0, 0.1:0, 0.2:0.1, 1:0.5
    [session]
    pattern = balanced:2000
    seed = 3

Both endpoints of a native channel load the same file; it is the only
thing they agree on in advance.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bitstream import Bitstream, parse_pattern
from .chanmodel import (
    AGX_EPOCH,
    ActorProfile,
    MemorySystemModel,
    NoiseModel,
    PiecewiseLinear,
    SlowdownCurve,
    apply_buffers,
    default_calibration,
    noiseless,
    orin_agx_like,
)
from .errors import ConfigError, SchemaVersionError
from .txrx import ChannelConfig, normalize_mode
from .units import MiB, format_duration, format_size, parse_duration, parse_rate, parse_size

CONFIG_HEADER = "mc3-config v1"
SWEEP_HEADER = "mc3-sweep v1"
MODEL_PRESETS = ("noiseless", "orin-agx-like", "orin-nx-default")
BACKENDS = ("sim", "native")
SWEEP_PARAMETERS = ("tx_buffer_size", "rx_buffer_size", "epochs_per_bit", "noise_sigma", "skew")
SEED_ENV = "MC3_SEED"

# (tx buffer, epochs per bit) for the three reference operating points of the orin-agx-like model
OPERATING_POINTS = {
    "high-capacity": (1 * MiB, 1),
    "mid": (2 * MiB, 2),
    "reliable": (2 * MiB, 5),
}


@dataclass
class Scenario:
    """Everything needed to run one session: channel, memory model and payload."""

    name: str
    channel: ChannelConfig
    model: str = "noiseless"
    pattern: str = "balanced:1024"
    seed: int = 1
    skew: float = 0.0
    backend: str = "sim"
    total_bandwidth: float | None = None
    noise: dict = field(default_factory=dict)
    actors: list[ActorProfile] = field(default_factory=list)
    slowdown_points: list[tuple[float, float]] | None = None
    tx_utilization_points: list[tuple[float, float]] | None = None
    rx_sensitivity_points: list[tuple[float, float]] | None = None

    def __post_init__(self) -> None:
        if self.model not in MODEL_PRESETS:
            raise ConfigError(f"unknown model preset {self.model!r}; choose from {MODEL_PRESETS}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        unknown = set(self.noise) - {f.name for f in fields(NoiseModel)} - {"seed"}
        if unknown:
            raise ConfigError(f"unknown noise keys: {sorted(unknown)}")

    def bits(self) -> Bitstream:
        return parse_pattern(self.pattern, default_seed=self.seed)

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)

    def build_model(self) -> MemorySystemModel:
        ch = self.channel
        if self.model == "orin-agx-like":
            model = orin_agx_like(ch.tx_buffer_size, ch.rx_buffer_size, seed=self.seed, interval=ch.epoch_interval)
        elif self.model == "orin-nx-default":
            noise = NoiseModel(gaussian_sigma=0.01, seed=self.seed, interval=ch.epoch_interval)
            model = default_calibration(ch.tx_buffer_size, ch.rx_buffer_size, noise)
        else:
            model = noiseless(ch.tx_buffer_size, ch.rx_buffer_size)
        if self.total_bandwidth is not None:
            model.total_bandwidth = self.total_bandwidth
        if self.slowdown_points is not None:
            model.slowdown_curve = SlowdownCurve(self.slowdown_points)
        if self.tx_utilization_points is not None:
            model.tx_utilization = PiecewiseLinear(self.tx_utilization_points)
        if self.rx_sensitivity_points is not None:
            model.rx_sensitivity = PiecewiseLinear(self.rx_sensitivity_points)
        if self.tx_utilization_points is not None or self.rx_sensitivity_points is not None:
            apply_buffers(model, ch.tx_buffer_size, ch.rx_buffer_size)
        if self.noise:
            over = {k: v for k, v in self.noise.items() if k != "seed"}
            model.noise = replace(model.noise, seed=self.seed, **over)
            if "gaussian_sigma" in over:
                # a global sigma also replaces per-actor amplitudes so sigma=0 really is quiet
                for a in model.actors.values():
                    if a.noise is not None:
                        a.noise = replace(a.noise, gaussian_sigma=over["gaussian_sigma"])
        for a in self.actors:
            model.add_actor(replace(a))
        return model


def _channel(T: float, R: int = 1, tx: int = 2 * MiB, rx: int = 1 * MiB, early_epochs: int = 32, **kw) -> ChannelConfig:
    return ChannelConfig(
        epoch_interval=T,
        epochs_per_bit=R,
        tx_buffer_size=tx,
        rx_buffer_size=rx,
        rx_early_start=early_epochs * T,
        calibration_warmup=kw.pop("calibration_warmup", 1e-3),
        **kw,
    )


def scenario_preset(name: str, seed: int = 1) -> Scenario:
    """Built-in scenarios: ``noiseless``, ``orin-nx-default``, ``orin-agx-like[@point]``.

    ``point`` is one of :data:`OPERATING_POINTS`; the bare ``orin-agx-like``
    name is the high-capacity point.
    """
    base, _, point = name.partition("@")
    if base == "noiseless":
        if point:
            raise ConfigError("operating points only exist for orin-agx-like")
        return Scenario(name, _channel(250e-6, 1), "noiseless", "balanced:1024", seed)
    if base == "orin-nx-default":
        if point:
            raise ConfigError("operating points only exist for orin-agx-like")
        return Scenario(name, _channel(250e-6, 1), "orin-nx-default", "balanced:1024", seed)
    if base == "orin-agx-like":
        point = point or "high-capacity"
        if point not in OPERATING_POINTS:
            raise ConfigError(f"unknown operating point {point!r}; choose from {sorted(OPERATING_POINTS)}")
        tx, R = OPERATING_POINTS[point]
        return Scenario(name, _channel(AGX_EPOCH, R, tx), "orin-agx-like", "balanced:2000", seed)
    raise ConfigError(f"unknown scenario {name!r}")


def scenario_names() -> list[str]:
    return ["noiseless", "orin-nx-default", "orin-agx-like"] + [f"orin-agx-like@{p}" for p in OPERATING_POINTS]


def seed_from_env(default: int) -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from exc


# -- text format ----------------------------------------------------------------

def _read_versioned(text: str, header: str, source: str) -> str:
    lines = text.splitlines()
    first = next((ln.strip() for ln in lines if ln.strip()), "")
    if first != header:
        raise SchemaVersionError(f"{source}: expected header {header!r}, found {first!r}")
    idx = next(i for i, ln in enumerate(lines) if ln.strip())
    return "\n".join(lines[idx + 1 :])


def parse_skew(text: str, epoch: float) -> float:
    text = text.strip()
    if text.endswith("T"):
        return float(text[:-1] or 1) * epoch
    return parse_duration(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def apply_overrides(parser: configparser.ConfigParser, overrides: list[str]) -> None:
    """Apply ``section.key=value`` overrides; sections are created as needed."""
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().rpartition(".")
        if not sep or not dot or not section or not option:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value.strip())


_MODEL_KEYS = {"preset", "total_bandwidth", "slowdown_curve", "tx_utilization", "rx_sensitivity"}
_SESSION_KEYS = {"name", "scenario", "pattern", "seed", "skew", "backend"}


def parse_scenario(text: str, overrides: list[str] | None = None, source: str = "<config>") -> Scenario:
    body = _read_versioned(text, CONFIG_HEADER, source)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(body, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    apply_overrides(parser, overrides or [])
    return scenario_from_parser(parser, source)


def scenario_from_parser(parser: configparser.ConfigParser, source: str = "<config>") -> Scenario:
    known = {"channel", "model", "noise", "session"}
    for s in parser.sections():
        if s not in known and not s.startswith("actor "):
            raise ConfigError(f"{source}: unknown section [{s}]")
    for s, keys in (("model", _MODEL_KEYS), ("session", _SESSION_KEYS)):
        if parser.has_section(s):
            extra = set(parser[s]) - keys
            if extra:
                raise ConfigError(f"{source}: unknown [{s}] keys {sorted(extra)}")
    try:
        sess = parser["session"] if parser.has_section("session") else {}
        mdl = parser["model"] if parser.has_section("model") else {}
        preset = mdl.get("preset", "noiseless")
        seed = int(sess.get("seed", 1))
        base = scenario_preset(sess.get("scenario", preset), seed) if sess.get("scenario") else None
        channel = _channel_from(parser["channel"] if parser.has_section("channel") else {}, base.channel if base else None)
        noise = {}
        if parser.has_section("noise"):
            for k, v in parser["noise"].items():
                noise[k] = parse_duration(v) if k == "interval" else float(v)
        actors = []
        for s in parser.sections():
            if s.startswith("actor "):
                actors.append(_actor_from(s[len("actor ") :].strip(), parser[s]))
        return Scenario(
            name=sess.get("name", base.name if base else preset),
            channel=channel,
            model=base.model if base and "preset" not in mdl else preset,
            pattern=sess.get("pattern", base.pattern if base else "balanced:1024"),
            seed=seed,
            skew=parse_skew(sess.get("skew", "0"), channel.epoch_interval),
            backend=sess.get("backend", "sim"),
            total_bandwidth=parse_rate(mdl["total_bandwidth"]) if "total_bandwidth" in mdl else None,
            slowdown_points=parse_points(mdl["slowdown_curve"], float) if "slowdown_curve" in mdl else None,
            tx_utilization_points=parse_points(mdl["tx_utilization"], parse_size) if "tx_utilization" in mdl else None,
            rx_sensitivity_points=parse_points(mdl["rx_sensitivity"], parse_size) if "rx_sensitivity" in mdl else None,
            noise=noise,
            actors=actors,
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def parse_points(text: str, parse_x) -> list[tuple[float, float]]:
    """Parse an interpolation table written as ``x:y, x:y, ...``."""
    pts = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        x, sep, y = item.rpartition(":")
        if not sep:
            raise ConfigError(f"interpolation point must be x:y, got {item!r}")
        pts.append((float(parse_x(x.strip())), float(y)))
    if not pts:
        raise ConfigError("interpolation table is empty")
    return pts


_CHANNEL_PARSERS = {
    "epoch_interval": parse_duration,
    "epochs_per_bit": int,
    "tx_buffer_size": parse_size,
    "rx_buffer_size": parse_size,
    "hysteresis_threshold": lambda v: None if v.strip().lower() == "auto" else parse_rate(v),
    "gamma_factor": float,
    "start_epoch": lambda v: None if v.strip().lower() == "auto" else float(v),
    "rx_early_start": parse_duration,
    "decoder_mode": normalize_mode,
    "calibration_warmup": parse_duration,
    "coarse_fraction": float,
    "fine_fraction": float,
    "refine_fraction": float,
    "spin_threshold": parse_duration,
}


def _channel_from(section, base: ChannelConfig | None) -> ChannelConfig:
    values = {}
    for k, v in section.items():
        if k not in _CHANNEL_PARSERS:
            raise ConfigError(f"unknown channel key {k!r}")
        values[k] = _CHANNEL_PARSERS[k](v)
    if base is not None:
        return replace(base, **values)
    if "epoch_interval" not in values:
        raise ConfigError("channel.epoch_interval is required")
    return ChannelConfig(**values)


def _actor_from(name: str, section) -> ActorProfile:
    square = None
    if "square_period" in section:
        square = (parse_duration(section["square_period"]), float(section.get("square_duty", "0.5")))
    noise = None
    if "noise_sigma" in section:
        noise = NoiseModel(gaussian_sigma=float(section["noise_sigma"]))
    return ActorProfile(
        name,
        parse_rate(section.get("demand", "0")),
        role=section.get("role", "background"),
        active=_bool(section.get("active", "true")),
        noise=noise,
        sensitivity=float(section.get("sensitivity", "1.0")),
        square_wave=square,
    )


def _dur(x: float) -> str:
    text = format_duration(x)
    return text if parse_duration(text) == x else repr(x)


def dump_scenario(sc: Scenario) -> str:
    ch = sc.channel
    lines = [CONFIG_HEADER, "[channel]"]
    lines.append(f"epoch_interval = {_dur(ch.epoch_interval)}")
    lines.append(f"epochs_per_bit = {ch.epochs_per_bit}")
    lines.append(f"tx_buffer_size = {format_size(ch.tx_buffer_size)}")
    lines.append(f"rx_buffer_size = {format_size(ch.rx_buffer_size)}")
    gamma = "auto" if ch.hysteresis_threshold is None else repr(ch.hysteresis_threshold)
    lines.append(f"hysteresis_threshold = {gamma}")
    lines.append(f"gamma_factor = {ch.gamma_factor!r}")
    lines.append(f"start_epoch = {'auto' if ch.start_epoch is None else repr(ch.start_epoch)}")
    lines.append(f"rx_early_start = {_dur(ch.rx_early_start)}")
    lines.append(f"decoder_mode = {ch.decoder_mode}")
    lines.append(f"calibration_warmup = {_dur(ch.calibration_warmup)}")
    for k in ("coarse_fraction", "fine_fraction", "refine_fraction"):
        lines.append(f"{k} = {getattr(ch, k)!r}")
    lines.append(f"spin_threshold = {_dur(ch.spin_threshold)}")
    lines += ["", "[model]", f"preset = {sc.model}"]
    if sc.total_bandwidth is not None:
        lines.append(f"total_bandwidth = {sc.total_bandwidth!r}")
    for key, pts in (
        ("slowdown_curve", sc.slowdown_points),
        ("tx_utilization", sc.tx_utilization_points),
        ("rx_sensitivity", sc.rx_sensitivity_points),
    ):
        if pts is not None:
            lines.append(f"{key} = " + ", ".join(f"{x!r}:{y!r}" for x, y in pts))
    if sc.noise:
        lines += ["", "[noise]"]
        for k, v in sc.noise.items():
            lines.append(f"{k} = {_dur(v) if k == 'interval' else repr(v)}")
    for a in sc.actors:
        lines += ["", f"[actor {a.name}]", f"role = {a.role}", f"demand = {a.demand_bandwidth!r}"]
        lines += [f"active = {str(a.active).lower()}", f"sensitivity = {a.sensitivity!r}"]
        if a.square_wave is not None:
            lines += [f"square_period = {_dur(a.square_wave[0])}", f"square_duty = {a.square_wave[1]!r}"]
        if a.noise is not None:
            lines.append(f"noise_sigma = {a.noise.gaussian_sigma!r}")
    lines += ["", "[session]", f"name = {sc.name}", f"pattern = {sc.pattern}", f"seed = {sc.seed}"]
    lines += [f"skew = {_dur(sc.skew)}", f"backend = {sc.backend}", ""]
    return "\n".join(lines)


def load_scenario(path: str | Path, overrides: list[str] | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_scenario(text, overrides, str(path))


def resolve_scenario(ref: str, overrides: list[str] | None = None) -> Scenario:
    """A preset name or a path to a scenario file, with overrides applied."""
    if ref in scenario_names() or (ref.startswith("orin-agx-like@") and not Path(ref).exists()):
        sc = scenario_preset(ref)
        if overrides:
            parser = configparser.ConfigParser(interpolation=None)
            parser.read_string(_read_versioned(dump_scenario(sc), CONFIG_HEADER, ref))
            apply_overrides(parser, overrides)
            sc = scenario_from_parser(parser, ref)
        return sc
    return load_scenario(ref, overrides)


# -- sweeps ---------------------------------------------------------------------

@dataclass
class SweepSpec:
    parameter: str
    values: list
    repetitions: int = 1
    scenario: Scenario | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def parse_sweep_value(parameter: str, text: str, epoch: float):
    text = text.strip()
    if parameter in ("tx_buffer_size", "rx_buffer_size"):
        return parse_size(text)
    if parameter == "epochs_per_bit":
        return int(text)
    if parameter == "skew":
        return parse_skew(text, epoch)
    return float(text)


def parse_sweep(text: str, source: str = "<sweep>", overrides: list[str] | None = None) -> SweepSpec:
    """Parse ``key = value`` lines after the ``mc3-sweep v1`` header.

    Keys: ``parameter``, ``values`` (comma separated), ``repetitions``,
    ``scenario`` (preset name or scenario file, relative to the sweep file)
    and ``workers``.
    """
    body = _read_versioned(text, SWEEP_HEADER, source)
    kv = {}
    for n, line in enumerate(body.splitlines(), 2):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected key = value")
        kv[key.strip()] = value.strip()
    unknown = set(kv) - {"parameter", "values", "repetitions", "scenario", "workers"}
    if unknown:
        raise ConfigError(f"{source}: unknown sweep keys {sorted(unknown)}")
    if "parameter" not in kv or "values" not in kv:
        raise ConfigError(f"{source}: sweep needs parameter and values")
    ref = kv.get("scenario", "noiseless")
    if ref not in scenario_names() and "@" not in ref and source != "<sweep>":
        candidate = Path(source).parent / ref
        if candidate.exists():
            ref = str(candidate)
    scenario = resolve_scenario(ref, overrides)
    try:
        values = [parse_sweep_value(kv["parameter"], v, scenario.channel.epoch_interval) for v in kv["values"].split(",") if v.strip()]
        return SweepSpec(kv["parameter"], values, int(kv.get("repetitions", 1)), scenario, int(kv.get("workers", 1)))
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_sweep(path: str | Path, overrides: list[str] | None = None) -> SweepSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read sweep file {path}: {exc.strerror or exc}") from exc
    return parse_sweep(text, str(path), overrides)


def apply_sweep_value(sc: Scenario, parameter: str, value) -> Scenario:
    """Copy of ``sc`` with one swept parameter set."""
    if parameter in ("tx_buffer_size", "rx_buffer_size", "epochs_per_bit"):
        return replace(sc, channel=replace(sc.channel, **{parameter: value}))
    if parameter == "noise_sigma":
        return replace(sc, noise={**sc.noise, "gaussian_sigma": float(value)})
    if parameter == "skew":
        return replace(sc, skew=float(value))
    raise ConfigError(f"cannot sweep {parameter!r}")

"""Link configuration: the ``LinkConfig`` bundle and its key=value text format.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Unknown keys are errors.  Tuple-valued keys use ``a,b`` for ranges and
``f:v,f:v`` for point lists, and ``none`` clears optional values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .frontend import PdaParams, ReceiverParams
from .ofdm import OfdmParams
from .optics import DEFAULT_OPTICAL_REF_HZ, FiberParams, LaserParams

FIDELITIES = ("equivalent_baseband", "full_field")
PACKAGED_CONFIGS = Path(__file__).parent / "data"


@dataclass(frozen=True)
class Impairments:
    phase_noise: bool = True
    fo_jitter: bool = True
    dispersion: bool = True
    additive_noise: bool = True


@dataclass(frozen=True)
class LinkParams:
    carrier_separation_hz: float = 195e9
    fidelity: str = "equivalent_baseband"
    seed: int = 1
    carrier_suppression_db: float = 20.0
    modulation_index: float = 0.2
    modulator_model: str = "ideal"
    edfa_gain_db: float = 10.0
    edfa_noise_figure_db: float = 5.0
    optical_ref_hz: float = DEFAULT_OPTICAL_REF_HZ
    memory_cap_mb: float = 4096.0


@dataclass(frozen=True)
class LinkConfig:
    ofdm: OfdmParams = field(default_factory=OfdmParams)
    laser1: LaserParams = field(default_factory=LaserParams)
    laser2: LaserParams = field(default_factory=LaserParams)
    fiber: FiberParams = field(default_factory=FiberParams)
    pda: PdaParams = field(default_factory=PdaParams)
    receiver: ReceiverParams = field(default_factory=ReceiverParams)
    link: LinkParams = field(default_factory=LinkParams)
    impairments: Impairments = field(default_factory=Impairments)

    @property
    def signal_freq_hz(self):
        """Sub-THz frequency of the data signal: carrier separation plus IF."""
        return self.link.carrier_separation_hz + self.ofdm.if_hz

    @property
    def seed(self):
        return self.link.seed

    def with_seed(self, seed):
        return replace(self, link=replace(self.link, seed=int(seed)))

    def fingerprint(self):
        blob = json.dumps(to_flat_dict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


SECTIONS = {f.name: f for f in fields(LinkConfig)}


def _section_types(section):
    return {f.name: f.type for f in fields(SECTIONS[section].default_factory())}


def _parse_value(raw, type_str, key):
    s = raw.strip()
    try:
        if "tuple" in type_str:
            if not s or s.lower() == "none":
                return ()
            items = [p.strip() for p in s.split(",") if p.strip()]
            if all(":" in p for p in items):
                return tuple(tuple(float(v) for v in p.split(":")) for p in items)
            return tuple(float(p) for p in items)
        if s.lower() == "none":
            if "None" not in type_str:
                raise ValueError("value may not be none")
            return None
        if type_str.startswith("bool"):
            if s.lower() in ("true", "yes", "on", "1"):
                return True
            if s.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {s!r}")
        if type_str.startswith("int"):
            v = float(s)
            if v != int(v):
                raise ValueError(f"not an integer: {s!r}")
            return int(v)
        if type_str.startswith("float"):
            return float(s)
        return s
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}", [key]) from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(":".join(repr(float(a)) for a in p) for p in v)
        return ",".join(repr(float(a)) for a in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_flat_dict(cfg: LinkConfig):
    out = {}
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        for f in fields(obj):
            v = getattr(obj, f.name)
            out[f"{sec}.{f.name}"] = _format_value(v)
    return out


def dump_config(cfg: LinkConfig) -> str:
    lines = [f"{k} = {v}" for k, v in to_flat_dict(cfg).items()]
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: LinkConfig | None = None) -> LinkConfig:
    """Parse config text over ``base`` (defaults when omitted) and validate it."""
    base = base or LinkConfig()
    updates: dict[str, dict] = {}
    unknown = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value", [])
        key, raw = (p.strip() for p in line.split("=", 1))
        sec, _, name = key.partition(".")
        if sec not in SECTIONS or name not in _section_types(sec):
            unknown.append(key)
            continue
        updates.setdefault(sec, {})[name] = _parse_value(raw, _section_types(sec)[name], key)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}", unknown)
    cfg = base
    for sec, kv in updates.items():
        try:
            cfg = replace(cfg, **{sec: replace(getattr(cfg, sec), **kv)})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{sec}: {exc}", [f"{sec}.{k}" for k in kv]) from None
    problems = validate_config(cfg)
    if problems:
        raise ConfigError("; ".join(m for _, m in problems), [k for k, _ in problems])
    return cfg


def load_config(path) -> LinkConfig:
    """Load a config file; a bare name such as ``paper_200GHz`` finds packaged configs."""
    p = Path(path)
    if not p.exists():
        cand = PACKAGED_CONFIGS / (p.name if p.suffix else p.name + ".cfg")
        if not cand.exists():
            raise ConfigError(f"config file not found: {path}", [])
        p = cand
    return parse_config(p.read_text())


def validate_config(cfg: LinkConfig):
    """Return ``[(key, message), ...]`` for every cross-field problem."""
    problems = []
    rx = cfg.receiver
    f_s = cfg.signal_freq_hz
    if not rx.in_mixer_band(f_s):
        problems.append((
            "link.carrier_separation_hz",
            f"signal frequency {f_s / 1e9:g} GHz (carrier separation + IF) outside mixer band "
            f"{rx.mixer_band_hz[0] / 1e9:g}-{rx.mixer_band_hz[1] / 1e9:g} GHz",
        ))
    if cfg.link.fidelity not in FIDELITIES:
        problems.append(("link.fidelity", f"fidelity must be one of {FIDELITIES}"))
    if cfg.link.modulator_model not in ("ideal", "iqmzm"):
        problems.append(("link.modulator_model", "modulator_model must be 'ideal' or 'iqmzm'"))
    if rx.if_hz != cfg.ofdm.if_hz:
        problems.append(("receiver.if_hz", "receiver.if_hz must equal ofdm.if_hz"))
    if cfg.link.edfa_gain_db < 0:
        problems.append(("link.edfa_gain_db", "EDFA gain must be non-negative"))
    if math.isnan(rx.rx_snr_db):
        problems.append(("receiver.rx_snr_db", "rx_snr_db must be a number"))
    return problems


def check_config(cfg: LinkConfig):
    problems = validate_config(cfg)
    if problems:
        raise ConfigError("; ".join(m for _, m in problems), [k for k, _ in problems])
    return cfg


def asdict(cfg):
    return dataclasses.asdict(cfg)

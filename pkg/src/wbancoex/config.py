"""Scenario configuration: flat ``key = value`` files with dotted sections.

    n_wbans = 10
    mode = link-game
    channel.seed = 7
    mac.cw_min = 140

Blank lines and ``#`` comments are ignored; unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from wbancoex.backoffgame import BackoffGameConfig
from wbancoex.linkgame import LinkGameConfig, PdrModel, load_pdr_model
from wbancoex.mac import MacParams, validation_params
from wbancoex.sim import MODES, PowerModel, SimConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _opt_int(text: str):
    return None if text.lower() in ("", "none") else int(text)


def _opt_float(text: str):
    return None if text.lower() in ("", "none") else float(text)


def _modes(text: str) -> tuple[str, ...]:
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}, expected one of {', '.join(MODES)}")
    return modes


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "n_wbans": (_ints, (10,)),
    "superframes": (int, 2000),
    "seed": (int, 1),
    "mode": (_modes, ("baseline-tdma",)),
    "replications": (int, 1),
    "workers": (int, 1),
    "outcome": (str, "sinr"),
    "interference": (str, "average"),
    "output_dir": (str, "out"),
    "record_series": (lambda s: s.lower() in ("1", "true", "yes"), True),
    "mac.preset": (str, "default"),
    "mac.superframe_len": (_opt_float, None),
    "mac.slot_len": (_opt_float, None),
    "mac.beacon_len": (_opt_float, None),
    "mac.payload_len_bytes": (_opt_int, None),
    "mac.ack_len": (_opt_float, None),
    "mac.cw_min": (_opt_int, None),
    "mac.max_backoff_stage": (_opt_int, None),
    "mac.persistence": (_opt_int, None),
    "mac.max_retry_limit": (_opt_int, None),
    "mac.rate_set": (lambda s: _floats(s) or None, None),
    "mac.power_min": (_opt_float, None),
    "mac.power_max": (_opt_float, None),
    "channel.mode": (str, "synthetic"),
    "channel.trace_path": (str, ""),
    "channel.seed": (_opt_int, None),
    "channel.doppler_hz": (float, 1.1),
    "channel.shadow_db": (float, 42.0),
    "channel.shadow_sigma_db": (float, 0.0),
    "channel.noise_dbm": (float, -100.0),
    "channel.onbody_mean_db": (float, 65.0),
    "channel.oscillators": (int, 16),
    "channel.turn_interval": (float, 1.0),
    "link.c": (float, LinkGameConfig.c),
    "link.g": (float, LinkGameConfig.g),
    "link.q": (float, LinkGameConfig.q),
    "link.grid_points": (int, LinkGameConfig.grid_points),
    "link.pdr_coefficients": (str, ""),
    "backoff.d": (float, BackoffGameConfig.d),
    "backoff.l": (float, BackoffGameConfig.l),
    "backoff.cw_lo": (int, BackoffGameConfig.cw_lo),
    "backoff.cw_hi": (int, BackoffGameConfig.cw_hi),
    "backoff.estimator_window": (_opt_int, None),
    "power.efficiency": (float, PowerModel.efficiency),
    "power.fixed": (float, PowerModel.fixed),
    "baseline.power": (_opt_float, None),
    "baseline.rate": (_opt_float, None),
    "poa.instances": (int, 200),
    "poa.exact_cap": (int, 3),
    "validate.superframes": (int, 100_000),
}

_UNHASHED = ("output_dir", "workers")

PRESETS: dict[str, dict[str, str]] = {
    "scenario2": {
        "n_wbans": "10",
        "mode": "baseline-tdma,link-game,backoff-game,both",
        "superframes": "2000",
        "mac.preset": "default",
        "channel.mode": "synthetic",
    },
    "validation": {
        "mac.preset": "validation",
        "outcome": "collision",
        "n_wbans": "2,4,6,8,10",
        "superframes": "100000",
    },
}


@dataclass
class ScenarioConfig:
    values: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def config_hash(self) -> str:
        """Digest of every setting that can change results (not where they go, nor pool size)."""
        keys = sorted(k for k in self.values if k not in _UNHASHED)
        text = "\n".join(f"{k}={self.values[k]!r}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def mac_params(self) -> MacParams:
        v = self.values
        preset = v["mac.preset"]
        if preset not in ("default", "validation"):
            raise ConfigError(f"mac.preset: unknown preset {preset!r}")
        kw = {}
        for name in ("superframe_len", "slot_len", "beacon_len", "payload_len_bytes", "ack_len",
                     "cw_min", "max_backoff_stage", "persistence", "max_retry_limit", "rate_set"):
            if v[f"mac.{name}"] is not None:
                kw[name] = v[f"mac.{name}"]
        if v["mac.power_min"] is not None or v["mac.power_max"] is not None:
            base = MacParams().power_range
            kw["power_range"] = (v["mac.power_min"] or base[0], v["mac.power_max"] or base[1])
        try:
            return validation_params(**kw) if preset == "validation" else MacParams(**kw)
        except ValueError as exc:
            raise ConfigError(f"mac: {exc}") from None

    def pdr_model(self) -> PdrModel:
        path = self.values["link.pdr_coefficients"]
        return load_pdr_model(path) if path else PdrModel()

    def link_config(self, mac: MacParams) -> LinkGameConfig:
        v = self.values
        try:
            return LinkGameConfig(
                c=v["link.c"], g=v["link.g"], q=v["link.q"], p_min=mac.power_range[0],
                p_max=mac.power_range[1], rates=mac.rate_set, grid_points=v["link.grid_points"],
            )
        except ValueError as exc:
            raise ConfigError(f"link: {exc}") from None

    def backoff_config(self) -> BackoffGameConfig:
        v = self.values
        try:
            return BackoffGameConfig(d=v["backoff.d"], l=v["backoff.l"], cw_lo=v["backoff.cw_lo"], cw_hi=v["backoff.cw_hi"])
        except ValueError as exc:
            raise ConfigError(f"backoff: {exc}") from None

    def channel_kwargs(self, seed: int) -> dict:
        v = self.values
        return dict(
            seed=v["channel.seed"] if v["channel.seed"] is not None else seed + 7_919,
            doppler_hz=v["channel.doppler_hz"],
            shadow_db=v["channel.shadow_db"],
            shadow_sigma_db=v["channel.shadow_sigma_db"],
            noise_dbm=v["channel.noise_dbm"],
            onbody_mean_db=v["channel.onbody_mean_db"],
            oscillators=v["channel.oscillators"],
            turn_interval=v["channel.turn_interval"],
        )

    def sim_config(self, n: int, mode: str, seed: int) -> SimConfig:
        v = self.values
        mac = self.mac_params()
        try:
            return SimConfig(
                n=n, superframes=v["superframes"], seed=seed, mode=mode, outcome=v["outcome"],
                interference=v["interference"], mac=mac, link=self.link_config(mac),
                backoff=self.backoff_config(), pdr_model=self.pdr_model(),
                power_model=PowerModel(v["power.efficiency"], v["power.fixed"]),
                baseline_power=v["baseline.power"], baseline_rate=v["baseline.rate"],
                estimator_window=v["backoff.estimator_window"], record_series=v["record_series"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ScenarioConfig:
    """Defaults, then preset, then file, then overrides; each layer may be absent."""
    raw: dict[str, str] = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
        raw.update(PRESETS[preset])
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        raw.update(parse_lines(p.read_text().splitlines(), str(p)))
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = str(value)
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            values[key] = default
    cfg = ScenarioConfig(values, raw)
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    v = cfg.values
    if not v["n_wbans"] or min(v["n_wbans"]) < 1:
        raise ConfigError("n_wbans: must be >= 1")
    if v["superframes"] < 1:
        raise ConfigError("superframes: must be >= 1")
    if v["replications"] < 1 or v["workers"] < 1:
        raise ConfigError("replications/workers: must be >= 1")
    if v["outcome"] not in ("sinr", "collision"):
        raise ConfigError("outcome: must be 'sinr' or 'collision'")
    if v["interference"] not in ("average", "min-sinr"):
        raise ConfigError("interference: must be 'average' or 'min-sinr'")
    if v["channel.mode"] not in ("synthetic", "trace"):
        raise ConfigError("channel.mode: must be 'synthetic' or 'trace'")
    if v["channel.mode"] == "trace" and not v["channel.trace_path"]:
        raise ConfigError("channel.trace_path: required when channel.mode = trace")
    cfg.mac_params()
    cfg.backoff_config()

"""Experiment configuration read from an INI-style file.

Sections: [experiment] (seed, output), [data] (SBM spec or a dataset
directory), [codebook], [stage1], [stage2]. Every key is checked against
the owning dataclass before anything runs.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .codebook import TauSchedule
from .graph import Graph, SbmSpec, generate_sbm, load_graph_dir
from .stage1 import Stage1Config
from .stage2 import Stage2Config

SEED_ENV = "LANGTOPO_SEED"
CODEBOOK_KEYS = ("K", "d_code", "strategy", "metric", "logit_scale")
TAU_KEYS = ("tau0", "tau_min", "decay_rate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output: Path = Path("runs")
    data_path: Path | None = None
    sbm: SbmSpec = SbmSpec()
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()

    def load_graph(self) -> Graph:
        if self.data_path is not None:
            return load_graph_dir(self.data_path)
        return generate_sbm(self.sbm)

    def to_json(self) -> str:
        d = {
            "seed": self.seed,
            "data_path": str(self.data_path) if self.data_path else None,
            "sbm": asdict(self.sbm),
            "stage1": json.loads(self.stage1.to_json()),
            "stage2": json.loads(self.stage2.to_json()),
        }
        return json.dumps(d, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _coerce(section: str, key: str, raw: str, default):
    where = f"[{section}] {key}"
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[low]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _section_values(cp, section: str, cls, allowed: tuple[str, ...] | None = None) -> dict:
    if not cp.has_section(section):
        return {}
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    out = {}
    for key, raw in cp.items(section):
        if key not in defaults or (allowed is not None and key not in allowed):
            raise ConfigError(f"[{section}] {key}: unknown field")
        out[key] = _coerce(section, key, raw, defaults[key])
    return out


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    for section in cp.sections():
        if section not in ("experiment", "data", "codebook", "stage1", "stage2"):
            raise ConfigError(f"[{section}]: unknown section")

    seed, output = 0, Path("runs")
    if cp.has_section("experiment"):
        for key, raw in cp.items("experiment"):
            if key == "seed":
                seed = _coerce("experiment", key, raw, 0)
            elif key == "output":
                output = Path(raw.strip())
            else:
                raise ConfigError(f"[experiment] {key}: unknown field")

    data_path = None
    sbm_kw = {}
    if cp.has_section("data"):
        items = dict(cp.items("data"))
        if "path" in items:
            data_path = Path(items.pop("path").strip())
            if base_dir is not None and not data_path.is_absolute():
                data_path = base_dir / data_path
        sub = configparser.ConfigParser(interpolation=None)
        sub.optionxform = str
        sub["data"] = items
        sbm_kw = _section_values(sub, "data", SbmSpec)

    s1 = _section_values(cp, "stage1", Stage1Config)
    if "tau" in s1:
        raise ConfigError("[stage1] tau: set tau0, tau_min, decay_rate under [codebook]")
    tau_kw = {}
    if cp.has_section("codebook"):
        items = dict(cp.items("codebook"))
        for key in TAU_KEYS:
            if key in items:
                tau_kw[key] = _coerce("codebook", key, items.pop(key), 1.0)
        sub = configparser.ConfigParser(interpolation=None)
        sub.optionxform = str
        sub["codebook"] = items
        s1.update(_section_values(sub, "codebook", Stage1Config, CODEBOOK_KEYS))
    s2 = _section_values(cp, "stage2", Stage2Config)

    try:
        sbm = SbmSpec(**sbm_kw)
    except ValueError as exc:
        raise ConfigError(f"[data] {exc}") from None
    try:
        tau = TauSchedule(**tau_kw)
    except ValueError as exc:
        raise ConfigError(f"[codebook] {exc}") from None
    try:
        stage1 = Stage1Config(tau=tau, **s1)
    except ValueError as exc:
        raise ConfigError(f"[stage1] {exc}") from None
    try:
        stage2 = Stage2Config(**s2)
    except ValueError as exc:
        raise ConfigError(f"[stage2] {exc}") from None
    if seed < 0:
        raise ConfigError("[experiment] seed: must be non-negative")
    return ExperimentConfig(seed, output, data_path, sbm, stage1, stage2)


def load_config(path: str | os.PathLike | None, env: dict | None = None) -> ExperimentConfig:
    """Read ``path`` (defaults when None) and apply the seed environment override."""
    if path is None:
        cfg = ExperimentConfig()
    else:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        cfg = parse_config(text, p.parent)
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "") != "":
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {env[SEED_ENV]!r}") from None
        if seed < 0:
            raise ConfigError(f"{SEED_ENV}: must be non-negative")
        cfg = replace(cfg, seed=seed)
    if cfg.data_path is not None and not cfg.data_path.is_dir():
        raise ConfigError(f"[data] path: {cfg.data_path} is not a directory")
    return cfg

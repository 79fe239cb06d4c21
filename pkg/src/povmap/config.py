"""Flat key-value run configuration.

One config file drives the whole pipeline.  Lines look like ``key = value``;
blank lines and ``#`` comments are ignored.  Covariate transforms use
``transform.<column> = log|arcsin_sqrt|identity`` keys and synthetic-region
settings use a ``sim.`` prefix.  Relative paths resolve against the config
file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError


@dataclass
class SimConfig:
    """Synthetic-region settings for the ``simulate`` stage."""

    comunas: int = 30
    psus_per_stratum: int = 6
    households_per_psu: int = 50
    covariates: int = 3
    sample_psus: int = 2
    sample_households: int = 10
    sd_household: float = 0.8
    sd_psu: float = 0.25
    sd_stratum: float = 0.3
    seed: int | None = None  # falls back to the run seed


@dataclass
class RunConfig:
    """Everything a pipeline run needs, in one place."""

    households: str | None = None
    covariates: str | None = None
    transforms: dict[str, str] = field(default_factory=dict)
    line_urban: float | None = None
    line_rural: float | None = None
    alphas: list[float] = field(default_factory=lambda: [0.0, 1.0])
    burn_in: int = 10_000
    draws: int = 10_000
    thin: int = 1
    chains: int = 4
    seed: int = 0
    beta_prior_sd: float = 1.0
    sd_prior_scale: float = 1.0
    multipliers: list[float] = field(default_factory=lambda: [1.10, 1.25, 1.50])
    cutoff: float = 0.5
    out: str = "."
    workers: int = 1
    sim: SimConfig = field(default_factory=SimConfig)

    def as_payload(self) -> dict:
        """JSON-ready dict, the request body the service accepts."""
        return asdict(self)


def _parse_bool_free_scalar(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


_INT_KEYS = {"burn_in", "draws", "thin", "chains", "seed", "workers"}
_FLOAT_KEYS = {"line_urban", "line_rural", "beta_prior_sd", "sd_prior_scale", "cutoff"}
_LIST_KEYS = {"alphas", "multipliers"}
_PATH_KEYS = {"households", "covariates", "out"}
_SIM_INT_KEYS = {
    "comunas",
    "psus_per_stratum",
    "households_per_psu",
    "covariates",
    "sample_psus",
    "sample_households",
    "seed",
}
_SIM_FLOAT_KEYS = {"sd_household", "sd_psu", "sd_stratum"}


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        try:
            _apply_key(cfg, key, value, base_dir)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from exc
    return cfg


def _apply_key(cfg: RunConfig, key: str, value: str, base_dir: Path | None) -> None:
    if key.startswith("transform."):
        cfg.transforms[key[len("transform.") :]] = value
        return
    if key.startswith("sim."):
        name = key[len("sim.") :]
        if name in _SIM_INT_KEYS:
            setattr(cfg.sim, name, int(value))
        elif name in _SIM_FLOAT_KEYS:
            setattr(cfg.sim, name, float(value))
        else:
            raise ConfigError(f"unknown config key 'sim.{name}'")
        return
    if key in _PATH_KEYS:
        path = Path(value)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        setattr(cfg, key, str(path))
        return
    if key in _INT_KEYS:
        setattr(cfg, key, int(value))
        return
    if key in _FLOAT_KEYS:
        setattr(cfg, key, float(value))
        return
    if key in _LIST_KEYS:
        setattr(cfg, key, [float(v.strip()) for v in value.split(",") if v.strip()])
        return
    raise ConfigError(f"unknown config key '{key}'")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), base_dir=path.parent.resolve())


def write_config(cfg: RunConfig, path, relative_paths: bool = True) -> None:
    """Write a config back out as flat key-value text.

    With ``relative_paths`` the household/covariate entries are written as
    bare file names (the convention for configs that sit next to their
    data), which keeps generated run directories byte-identical across
    locations.
    """
    lines = []

    def emit(key: str, value) -> None:
        lines.append(f"{key} = {value}")

    for key in ("households", "covariates"):
        value = getattr(cfg, key)
        if value is not None:
            emit(key, Path(value).name if relative_paths else value)
    for column, tag in cfg.transforms.items():
        emit(f"transform.{column}", tag)
    if cfg.line_urban is not None:
        emit("line_urban", repr(cfg.line_urban))
    if cfg.line_rural is not None:
        emit("line_rural", repr(cfg.line_rural))
    emit("alphas", ", ".join(format(a, "g") for a in cfg.alphas))
    for key in ("burn_in", "draws", "thin", "chains", "seed"):
        emit(key, getattr(cfg, key))
    emit("beta_prior_sd", repr(cfg.beta_prior_sd))
    emit("sd_prior_scale", repr(cfg.sd_prior_scale))
    emit("multipliers", ", ".join(repr(m) for m in cfg.multipliers))
    emit("cutoff", repr(cfg.cutoff))
    emit("out", "." if relative_paths else cfg.out)
    # workers is a runtime knob, not part of the run definition; leaving it
    # out keeps generated configs identical across parallelism degrees
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

"""Flat ``key = value`` run configurations and sweep grids.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Every problem is reported as a :class:`ConfigError` naming the
file and line.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from floquet_dtc.model import DriveProtocol, ParameterError, SystemParams

MODES = ("meanfield", "quantum")
MAX_QUANTUM_SPINS = 6
MAX_GRID_CELLS = 10_000
GRID_KEYS = ("h", "gamma", "Gamma", "Gamma_tilde", "epsilon")

# config key -> SystemParams field
PARAM_KEYS = {
    "omega_T": "omega_T",
    "epsilon": "epsilon",
    "lambda": "lam",
    "h": "h",
    "gamma": "gamma",
    "Gamma": "Gamma",
    "Gamma_tilde": "Gamma_tilde",
    "n_spins": "n_spins",
}
INT_KEYS = {"n_spins", "n_periods", "steps_per_period", "n_max", "record_stride"}
FLOAT_KEYS = {"omega_T", "epsilon", "lambda", "h", "gamma", "Gamma", "Gamma_tilde", "alpha",
              "truncation_abort"}
STR_KEYS = {"mode", "output_dir"}
ALL_KEYS = INT_KEYS | FLOAT_KEYS | STR_KEYS

MODE_DEFAULTS = {
    "meanfield": {"n_periods": 500, "steps_per_period": 1000, "record_stride": 10},
    "quantum": {"n_periods": 100, "steps_per_period": 2000, "record_stride": 20},
}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    mode: str
    params: SystemParams
    n_periods: int
    steps_per_period: int
    record_stride: int
    n_max: int = 16
    alpha: float = 0.01
    truncation_abort: float = 1e-4
    output_dir: str = "dtc_output"
    source: str = "<config>"
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def protocol(self) -> DriveProtocol:
        return DriveProtocol.from_params(self.params, self.n_periods)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get("DTC_OUTPUT_DIR") or self.output_dir)

    def with_params(self, **changes) -> RunConfig:
        return replace(self, params=self.params.replace(**changes))

    def echo(self) -> dict:
        """The config as flat key/value pairs, keyed like the input file."""
        out = {"mode": self.mode}
        for key, name in PARAM_KEYS.items():
            out[key] = getattr(self.params, name)
        out.update(
            n_periods=self.n_periods,
            steps_per_period=self.steps_per_period,
            record_stride=self.record_stride,
        )
        if self.mode == "quantum":
            out.update(n_max=self.n_max, alpha=self.alpha, truncation_abort=self.truncation_abort)
        out["output_dir"] = str(self.resolved_output_dir())
        return out


def _read_pairs(text: str, source: str) -> list:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        pairs.append((lineno, key, value))
    return pairs


def _convert(key: str, value: str, source: str, lineno: int):
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        kind = "an integer" if key in INT_KEYS else "a finite number"
        raise ConfigError(f"{key} must be {kind}, got {value!r}", source, lineno) from None
    return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values, lines = {}, {}
    for lineno, key, value in _read_pairs(text, source):
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", source, lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", source, lineno)
        values[key] = _convert(key, value, source, lineno)
        lines[key] = lineno

    def fail(msg, key=None):
        raise ConfigError(msg, source, lines.get(key))

    mode = values.get("mode")
    if mode is None:
        fail("missing required key 'mode'")
    if mode not in MODES:
        fail(f"mode must be one of {', '.join(MODES)}, got {mode!r}", "mode")

    defaults = MODE_DEFAULTS[mode]
    kwargs = {name: values[key] for key, name in PARAM_KEYS.items() if key in values}
    try:
        params = SystemParams(**kwargs)
    except ParameterError as err:
        msg = str(err)
        name = msg.split()[0].strip("|")
        key = {v: k for k, v in PARAM_KEYS.items()}.get(name, name)
        if name == "lam":
            msg = "lambda" + msg[len(name):]
        fail(msg, key)

    cfg = RunConfig(
        mode=mode,
        params=params,
        n_periods=values.get("n_periods", defaults["n_periods"]),
        steps_per_period=values.get("steps_per_period", defaults["steps_per_period"]),
        record_stride=values.get("record_stride", defaults["record_stride"]),
        n_max=values.get("n_max", 16),
        alpha=values.get("alpha", 0.01),
        truncation_abort=values.get("truncation_abort", 1e-4),
        output_dir=values.get("output_dir", "dtc_output"),
        source=source,
        lines=lines,
    )
    if cfg.n_periods < 1:
        fail(f"n_periods must be >= 1, got {cfg.n_periods}", "n_periods")
    if cfg.steps_per_period < 2 or cfg.steps_per_period % 2:
        fail(f"steps_per_period must be a positive even integer, got {cfg.steps_per_period}",
             "steps_per_period")
    half = cfg.steps_per_period // 2
    if cfg.record_stride < 1 or half % cfg.record_stride:
        fail(f"record_stride must divide half a period ({half} steps), got {cfg.record_stride}",
             "record_stride")
    if mode == "quantum":
        if not 1 <= params.n_spins <= MAX_QUANTUM_SPINS:
            fail(f"quantum mode needs 1 <= n_spins <= {MAX_QUANTUM_SPINS}, got {params.n_spins}",
                 "n_spins")
        if cfg.n_max < 1:
            fail(f"n_max must be >= 1, got {cfg.n_max}", "n_max")
        if cfg.alpha < 0:
            fail(f"alpha must be non-negative, got {cfg.alpha}", "alpha")
        if cfg.truncation_abort <= 0:
            fail(f"truncation_abort must be positive, got {cfg.truncation_abort}", "truncation_abort")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", str(path)) from None
    return parse_config(text, str(path))


def parse_grid(text: str, source: str = "<grid>") -> list:
    """Expand a sweep grid into a list of parameter dicts, in grid order.

    Each line is ``key = v1, v2, ...`` for one of the sweepable keys. Several
    keys may vary jointly: ``gamma Gamma = 0.05 0.05, 1.5 0.3`` gives two
    cells, each value holding one number per key. Lines combine as a
    Cartesian product with the first line varying slowest. An empty grid
    yields no cells.
    """
    axes, seen = [], {}
    for lineno, key_part, value_part in _read_pairs(text, source):
        keys = key_part.split()
        for key in keys:
            if key not in GRID_KEYS:
                raise ConfigError(f"cannot sweep {key!r}; choose from {', '.join(GRID_KEYS)}",
                                  source, lineno)
            if key in seen:
                raise ConfigError(f"{key!r} already swept on line {seen[key]}", source, lineno)
            seen[key] = lineno
        cells = []
        for chunk in value_part.split(","):
            nums = chunk.split()
            if len(nums) != len(keys):
                raise ConfigError(
                    f"each value needs {len(keys)} number(s) for {' '.join(keys)}, got {chunk.strip()!r}",
                    source, lineno)
            try:
                cells.append({k: float(v) for k, v in zip(keys, nums)})
            except ValueError:
                raise ConfigError(f"not a number in {chunk.strip()!r}", source, lineno) from None
        axes.append(cells)
    if not axes:
        return []
    size = math.prod(len(a) for a in axes)
    if size > MAX_GRID_CELLS:
        raise ConfigError(f"grid has {size} cells, limit is {MAX_GRID_CELLS}", source)
    out = []
    for combo in itertools.product(*axes):
        cell = {}
        for part in combo:
            cell.update(part)
        out.append(cell)
    return out


def load_grid(path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read grid: {err.strerror}", str(path)) from None
    return parse_grid(text, str(path))

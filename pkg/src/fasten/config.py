"""Experiment configuration files.

The primary format is TOML; JSON with the same structure is accepted too.
Grammar (every key optional unless marked)::

    method = "fasten"          # fasten | vanilla | oversampling | glc | oracle_t | fasten_no_lc
    seeds = [0, 1, 2, 3, 4]
    out = "results"

    [dataset]
    n_classes = 4
    per_class = 1200           # samples generated per class before splitting
    dim = 16
    spread = 0.34
    fractions = [0.8333333333333334, 0.041666666666666664, 0.041666666666666664, 0.08333333333333333]

    [noise]
    kind = "symmetric"         # or "asymmetric"
    gamma = 0.6
    pairing = [1, 2, 3, 0]     # asymmetric only

    [train]                    # any TrainConfig field except the baseline switches
    rho = 0.9
    lam = 0.5
    K = 10
    M = 40                     # noisy batch size; default K * n_classes (JSON: null)
    epochs = 30

    [sweep]
    param = "lam"              # a [train] key or "gamma"
    values = [0.01, 0.05, 0.1, 0.2, 0.5, 1.0]

Validation happens before any compute. Every error names the offending line.
"""
from __future__ import annotations

import dataclasses
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BaselineKind
from .data import DEFAULT_SPREAD, NoiseSpec, split_counts
from .training import TrainConfig
from .transition import check_pairing

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PAPER_FRACTIONS = (5 / 6, 1 / 24, 1 / 24, 1 / 12)

TRAIN_KEYS = {
    "rho": float, "lam": float, "K": int, "M": int, "epochs": int, "lr": float,
    "decay_epochs": list, "decay_factor": float, "momentum": float, "hidden": list,
    "correction_enabled": bool, "correction_cadence": str, "perturbation_rate": float,
}
DATASET_KEYS = {"n_classes": int, "per_class": int, "dim": int, "spread": float, "fractions": list}
NOISE_KEYS = {"kind": str, "gamma": float, "pairing": list}
SWEEP_KEYS = {"param": str, "values": list}
TOP_KEYS = {"method": str, "seeds": list, "out": str,
            "dataset": dict, "noise": dict, "train": dict, "sweep": dict}
NULLABLE = {"M", "decay_epochs"}  # null (JSON only) means "use the default"
SWEEPABLE = set(TRAIN_KEYS) - {"decay_epochs", "hidden"} | {"gamma"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}" if line else (path or "<config>")
        super().__init__(f"{where}: {message}")


@dataclass
class DatasetConfig:
    n_classes: int = 4
    per_class: int = 1200
    dim: int = 16
    spread: float = DEFAULT_SPREAD
    fractions: tuple[float, ...] = PAPER_FRACTIONS


@dataclass
class SweepConfig:
    param: str
    values: list


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec("symmetric", 0.6))
    method: str = "fasten"
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"

    def to_dict(self) -> dict:
        train = {k: getattr(self.train, k) for k in TRAIN_KEYS}
        for k in ("decay_epochs", "hidden"):
            train[k] = None if train[k] is None else list(train[k])
        noise = {"kind": self.noise.kind, "gamma": self.noise.gamma}
        if self.noise.pairing is not None:
            noise["pairing"] = [int(v) for v in self.noise.pairing]
        d = {"method": self.method, "seeds": list(self.seeds), "out": self.out,
             "dataset": dataclasses.asdict(self.dataset) | {"fractions": list(self.dataset.fractions)},
             "noise": noise, "train": train}
        if self.sweep is not None:
            d["sweep"] = {"param": self.sweep.param, "values": list(self.sweep.values)}
        return d


class _Locator:
    """Best-effort mapping from (section, key) to a 1-based line in the source text."""

    def __init__(self, text: str, is_json: bool):
        self.lines = text.splitlines()
        self.is_json = is_json

    def find(self, section: str | None, key: str | None = None) -> int | None:
        start = 0
        if section is not None:
            start = self._find_pattern(self._section_pattern(section), 0)
            if start is None:
                return None
            if key is None:
                return start + 1
            start += 1
        if key is None:
            return None
        hit = self._find_pattern(self._key_pattern(key), start)
        return None if hit is None else hit + 1

    def _section_pattern(self, section):
        if self.is_json:
            return re.compile(rf'"{re.escape(section)}"\s*:')
        return re.compile(rf"^\s*\[\s*{re.escape(section)}\s*\]")

    def _key_pattern(self, key):
        if self.is_json:
            return re.compile(rf'"{re.escape(key)}"\s*:')
        return re.compile(rf'^\s*"?{re.escape(key)}"?\s*=')

    def _find_pattern(self, pattern, start):
        for i in range(start, len(self.lines)):
            if pattern.search(self.lines[i]):
                return i
        return None


def _check_type(value, kind, where):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise TypeError(f"{where} must be an integer, got a boolean")
    if isinstance(value, kind):
        return value
    raise TypeError(f"{where} must be {kind.__name__}, got {type(value).__name__}")


def parse_config(text: str, path: str | None = None, fmt: str | None = None) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` with a line number when one is known."""
    is_json = fmt == "json" or (fmt is None and text.lstrip().startswith("{"))
    try:
        raw = json.loads(text) if is_json else tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", int(m.group(1)) if m else None, path) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a table", 1, path)
    loc = _Locator(text, is_json)

    def fail(msg, section=None, key=None):
        line = loc.find(section, key) if key is not None or section is not None else None
        if line is None and section is not None:
            line = loc.find(section)
        raise ConfigError(msg, line, path)

    def take(table, schema, section):
        out = {}
        for key, value in table.items():
            if key not in schema:
                fail(f"unknown key {key!r}" + (f" in [{section}]" if section else ""), section, key)
            if value is None and key in NULLABLE and schema is TRAIN_KEYS:
                out[key] = None
                continue
            try:
                out[key] = _check_type(value, schema[key], key)
            except TypeError as exc:
                fail(str(exc), section, key)
        return out

    top = take(raw, TOP_KEYS, None)
    cfg = ExperimentConfig()

    ds = take(top.get("dataset", {}), DATASET_KEYS, "dataset")
    if "fractions" in ds:
        fr = ds["fractions"]
        if len(fr) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in fr):
            fail("fractions must be 4 numbers (noisy, clean, valid, test)", "dataset", "fractions")
        ds["fractions"] = tuple(float(v) for v in fr)
        if any(v <= 0 for v in ds["fractions"]) or sum(ds["fractions"]) > 1 + 1e-9:
            fail("fractions must be positive and sum to at most 1", "dataset", "fractions")
    cfg.dataset = DatasetConfig(**ds)
    for key in ("n_classes", "per_class", "dim"):
        if getattr(cfg.dataset, key) < (2 if key != "per_class" else 1):
            fail(f"{key} is too small", "dataset", key)
    if cfg.dataset.spread <= 0:
        fail("spread must be positive", "dataset", "spread")

    nz = take(top.get("noise", {}), NOISE_KEYS, "noise")
    if "pairing" in nz and nz.get("kind", "symmetric") != "asymmetric":
        fail("pairing applies to asymmetric noise only", "noise", "pairing")
    try:
        cfg.noise = NoiseSpec(nz.get("kind", "symmetric"), nz.get("gamma", 0.6), nz.get("pairing"))
    except ValueError as exc:
        msg = str(exc)
        fail(msg, "noise", next((k for k in ("kind", "pairing", "gamma") if k in nz and k in msg),
                                next(iter(nz), None)))

    if "method" in top:
        try:
            cfg.method = BaselineKind(top["method"]).value
        except ValueError:
            fail(f"unknown method {top['method']!r}; expected one of "
                 f"{[k.value for k in BaselineKind]}", None, "method")

    tr = take(top.get("train", {}), TRAIN_KEYS, "train")
    for key in ("decay_epochs", "hidden"):
        if tr.get(key) is not None:
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in tr[key]):
                fail(f"{key} must be a list of integers", "train", key)
            tr[key] = tuple(tr[key])
    try:
        cfg.train = TrainConfig(**tr)
    except ValueError as exc:
        msg = str(exc)
        fail(msg, "train", next((k for k in tr if k.lower() in msg.lower()), None))

    if "sweep" in top:
        sw = take(top["sweep"], SWEEP_KEYS, "sweep")
        if "param" not in sw or "values" not in sw:
            fail("sweep needs both 'param' and 'values'", "sweep")
        if sw["param"] not in SWEEPABLE:
            fail(f"cannot sweep {sw['param']!r}; sweepable: {sorted(SWEEPABLE)}", "sweep", "param")
        if not sw["values"]:
            fail("sweep values must not be empty", "sweep", "values")
        kind = float if sw["param"] == "gamma" else TRAIN_KEYS[sw["param"]]
        values = []
        for v in sw["values"]:
            try:
                values.append(_check_type(v, kind, f"sweep value {v!r}"))
            except TypeError as exc:
                fail(str(exc), "sweep", "values")
        # each swept value must itself give a valid run
        for v in values:
            try:
                if sw["param"] == "gamma":
                    NoiseSpec(cfg.noise.kind, v, cfg.noise.pairing)
                else:
                    cfg.train.replace(**{sw["param"]: v})
            except ValueError as exc:
                fail(f"sweep value {v!r}: {exc}", "sweep", "values")
        cfg.sweep = SweepConfig(sw["param"], values)

    if "seeds" in top:
        seeds = top["seeds"]
        if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
            fail("seeds must be a non-empty list of nonnegative integers", None, "seeds")
        if len(set(seeds)) != len(seeds):
            fail("seeds must be distinct", None, "seeds")
        cfg.seeds = list(seeds)
    if "out" in top:
        cfg.out = top["out"]
    _check_feasible(cfg, fail)
    return cfg


def _check_feasible(cfg: ExperimentConfig, fail):
    """Size checks that would otherwise only fail mid-run."""
    ds = cfg.dataset
    noisy, clean, valid, test = split_counts(ds.per_class, ds.fractions)
    if min(valid, test) < 1:
        fail(f"per_class={ds.per_class} leaves an empty valid or test split", "dataset", "fractions")
    if cfg.noise.pairing is not None:
        try:
            check_pairing(cfg.noise.pairing, ds.n_classes)
        except ValueError as exc:
            fail(str(exc), "noise", "pairing")
    Ks = [cfg.train.K]
    Ms = [cfg.train.M]
    if cfg.sweep is not None and cfg.sweep.param == "K":
        Ks = cfg.sweep.values
    if cfg.sweep is not None and cfg.sweep.param == "M":
        Ms = cfg.sweep.values
    for K in Ks:
        if K > clean:
            fail(f"K={K} exceeds the {clean} clean samples per class", "train" if len(Ks) == 1 else "sweep",
                 "K" if len(Ks) == 1 else "values")
        for M in Ms:
            m = M or K * ds.n_classes
            if m > noisy * ds.n_classes:
                fail(f"noisy batch size {m} exceeds the {noisy * ds.n_classes} noisy samples",
                     "train", "M" if M else "K")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    fmt = "json" if path.suffix.lower() == ".json" else None
    return parse_config(text, str(path), fmt)


def parse_seed_list(text: str) -> list[int]:
    """``"0,1,2"`` or ``"0-4"`` (inclusive range), or a mix of both."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise ValueError(f"bad seed {part!r}")
    if not seeds or len(set(seeds)) != len(seeds):
        raise ValueError("seed list must be non-empty and distinct")
    return seeds

"""Scenario and sweep configuration (YAML), with strict key and range checks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .dynamics import MemoryKernel
from .errors import ConfigError, FjmpcError
from .network import GeneratorParams, InfluenceNetwork, generate_synthetic_network, read_network
from .policy import CUMULATIVE, LITERAL, MpcConfig

SCHEMA_VERSION = 1
POLICIES = ("naive", "rh")
ESTIMATORS = ("running_mean", "leaky")


@dataclass(frozen=True)
class NetworkSource:
    """Either a network file or synthetic-generator parameters plus a seed."""

    file: Optional[str] = None
    generator: Optional[GeneratorParams] = None
    seed: int = 0


@dataclass(frozen=True)
class KernelConfig:
    variant: str = "iir"
    tau: float = 3.0
    window: Optional[int] = None


@dataclass(frozen=True)
class ModelConfig:
    beta: float
    T: int
    alpha: float = 0.5
    rho: Any = None  # None keeps the network's own weights; scalar or per-agent tuple
    x0: Any = None   # None starts from the inherent bias


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "running_mean"
    decay: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    network: NetworkSource
    model: ModelConfig
    kernel: KernelConfig = KernelConfig()
    mpc: MpcConfig = MpcConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    output: str = "runs"
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    base_dir: str = field(default=".", compare=False, repr=False)

    def memory_kernel(self) -> MemoryKernel:
        k = self.kernel
        return MemoryKernel(k.variant, k.tau, k.window)

    def build_network(self) -> InfluenceNetwork:
        """Load or generate the network and apply the configured persistence weights."""
        src = self.network
        if src.file is not None:
            path = Path(src.file)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            try:
                net = read_network(path)
            except OSError as exc:
                raise ConfigError(f"network.file: cannot read {path}: {exc.strerror}") from None
        else:
            net, _ = generate_synthetic_network(src.generator or GeneratorParams(), src.seed)
        rho = self.model.rho
        if rho is None:
            return net
        rho = np.asarray(rho, dtype=float)
        if rho.ndim and rho.shape != (net.n_agents,):
            raise ConfigError(f"model.rho: expected a scalar or {net.n_agents} values")
        return net.with_persistence(np.broadcast_to(rho, (net.n_agents,)))

    def initial_state(self, n: int):
        x0 = self.model.x0
        if x0 is None:
            return None
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim and x0.shape != (n,):
            raise ConfigError(f"model.x0: expected a scalar or {n} values")
        return np.broadcast_to(x0, (n,)).copy()


# -- parsing helpers ---------------------------------------------------------------

def _check_keys(section: dict, allowed: Sequence[str], where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _number(value, key: str, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    v = int(value) if integer else float(value)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(f"{key}: {v} is below the {'exclusive ' if lo_open else ''}lower bound {lo}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(f"{key}: {v} is above the {'exclusive ' if hi_open else ''}upper bound {hi}")
    return v


def _unit_values(value, key: str):
    """A scalar or a list of numbers, each in [0, 1]."""
    if isinstance(value, (list, tuple)):
        if not value:
            raise ConfigError(f"{key}: empty list")
        return tuple(_number(v, f"{key}[{i}]", 0.0, 1.0) for i, v in enumerate(value))
    return _number(value, key, 0.0, 1.0)


def _weight(value, key: str):
    if isinstance(value, (list, tuple)):
        rows = []
        for i, row in enumerate(value):
            if not isinstance(row, (list, tuple)):
                raise ConfigError(f"{key}: a matrix must be given as a list of rows")
            rows.append(tuple(_number(v, f"{key}[{i}]") for v in row))
        if len({len(r) for r in rows}) != 1 or len(rows) != len(rows[0]):
            raise ConfigError(f"{key}: matrix must be square")
        return tuple(rows)
    return _number(value, key, 0.0, lo_open=True)


def _parse_generator(raw: dict) -> GeneratorParams:
    names = [f.name for f in dataclasses.fields(GeneratorParams)]
    _check_keys(raw, names, "network.generator")
    kwargs = {}
    for k, v in raw.items():
        if k in ("reluctance_beta", "lambda_range", "education_probabilities"):
            if not isinstance(v, (list, tuple)):
                raise ConfigError(f"network.generator.{k}: expected a list")
            v = tuple(_number(x, f"network.generator.{k}") for x in v)
        elif k == "education_reliability":
            if not isinstance(v, dict):
                raise ConfigError(f"network.generator.{k}: expected a mapping")
            v = {str(a): _number(b, f"network.generator.{k}.{a}") for a, b in v.items()}
        elif k == "self_loops":
            if not isinstance(v, bool):
                raise ConfigError(f"network.generator.{k}: expected true/false")
        elif k in ("n_agents", "n_prejudice_groups"):
            v = _number(v, f"network.generator.{k}", 1, integer=True)
        else:
            v = _number(v, f"network.generator.{k}")
        kwargs[k] = v
    params = GeneratorParams(**kwargs)
    try:
        params.check()
    except FjmpcError as exc:
        raise ConfigError(f"network.generator: {exc}") from None
    return params


def config_from_dict(raw: dict, base_dir: str = ".") -> ScenarioConfig:
    """Validate a parsed mapping and resolve defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    _check_keys(raw, ["schema_version", "seed", "network", "kernel", "model", "mpc",
                      "estimator", "output"], "config")
    for key in ("network", "model"):
        if key not in raw:
            raise ConfigError(f"config: missing mandatory section '{key}'")

    version = _number(raw.get("schema_version", SCHEMA_VERSION), "schema_version", integer=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version} (expected {SCHEMA_VERSION})")
    seed = _number(raw.get("seed", 0), "seed", 0, integer=True)

    net_raw = raw["network"]
    _check_keys(net_raw, ["file", "generator", "seed"], "network")
    if ("file" in net_raw) == ("generator" in net_raw):
        raise ConfigError("network: give exactly one of 'file' or 'generator'")
    if "file" in net_raw and not isinstance(net_raw["file"], str):
        raise ConfigError("network.file: expected a path string")
    network = NetworkSource(
        file=net_raw.get("file"),
        generator=_parse_generator(net_raw.get("generator") or {}) if "generator" in net_raw else None,
        seed=_number(net_raw.get("seed", 0), "network.seed", 0, integer=True),
    )

    k_raw = raw.get("kernel", {}) or {}
    _check_keys(k_raw, ["variant", "tau", "window"], "kernel")
    variant = k_raw.get("variant", "iir")
    if variant not in ("iir", "fir"):
        raise ConfigError(f"kernel.variant: must be 'iir' or 'fir', got {variant!r}")
    window = k_raw.get("window")
    if window is not None:
        window = _number(window, "kernel.window", 1, integer=True)
    if variant == "fir" and window is None:
        raise ConfigError("kernel.window: required for the fir variant")
    kernel = KernelConfig(variant, _number(k_raw.get("tau", 3.0), "kernel.tau", 0.0, lo_open=True), window)

    m_raw = raw["model"]
    _check_keys(m_raw, ["alpha", "rho", "beta", "T", "x0"], "model")
    for key in ("beta", "T"):
        if key not in m_raw:
            raise ConfigError(f"model: missing mandatory key '{key}'")
    model = ModelConfig(
        beta=_number(m_raw["beta"], "model.beta", 0.0),
        T=_number(m_raw["T"], "model.T", 1, integer=True),
        alpha=_number(m_raw.get("alpha", 0.5), "model.alpha", 0.0, 1.0),
        rho=None if m_raw.get("rho") is None else _unit_values(m_raw["rho"], "model.rho"),
        x0=None if m_raw.get("x0") is None else _unit_values(m_raw["x0"], "model.x0"),
    )

    c_raw = raw.get("mpc", {}) or {}
    names = [f.name for f in dataclasses.fields(MpcConfig)]
    _check_keys(c_raw, names, "mpc")
    defaults = MpcConfig()
    rule = c_raw.get("budget_rule", defaults.budget_rule)
    if rule not in (CUMULATIVE, LITERAL):
        raise ConfigError(f"mpc.budget_rule: must be '{CUMULATIVE}' or '{LITERAL}', got {rule!r}")
    for flag in ("use_terminal", "polish"):
        if flag in c_raw and not isinstance(c_raw[flag], bool):
            raise ConfigError(f"mpc.{flag}: expected true/false")
    mpc = MpcConfig(
        horizon=_number(c_raw.get("horizon", defaults.horizon), "mpc.horizon", 1, integer=True),
        q_weight=_weight(c_raw.get("q_weight", defaults.q_weight), "mpc.q_weight"),
        r1_weight=_weight(c_raw.get("r1_weight", defaults.r1_weight), "mpc.r1_weight"),
        r2_weight=_weight(c_raw.get("r2_weight", defaults.r2_weight), "mpc.r2_weight"),
        q_terminal=_weight(c_raw.get("q_terminal", defaults.q_terminal), "mpc.q_terminal"),
        use_terminal=c_raw.get("use_terminal", defaults.use_terminal),
        budget_rule=rule,
        tol_p=_number(c_raw.get("tol_p", defaults.tol_p), "mpc.tol_p", 0.0, lo_open=True),
        tol_d=_number(c_raw.get("tol_d", defaults.tol_d), "mpc.tol_d", 0.0, lo_open=True),
        max_iter=_number(c_raw.get("max_iter", defaults.max_iter), "mpc.max_iter", 1, integer=True),
        polish=c_raw.get("polish", defaults.polish),
    )

    e_raw = raw.get("estimator", {}) or {}
    _check_keys(e_raw, ["kind", "decay"], "estimator")
    kind = e_raw.get("kind", "running_mean")
    if kind not in ESTIMATORS:
        raise ConfigError(f"estimator.kind: must be one of {', '.join(ESTIMATORS)}, got {kind!r}")
    decay = e_raw.get("decay")
    if decay is not None:
        decay = _number(decay, "estimator.decay", 0.0, 1.0, hi_open=True)
    if kind == "leaky" and decay is None:
        raise ConfigError("estimator.decay: required for the leaky estimator")

    output = raw.get("output", "runs")
    if not isinstance(output, str):
        raise ConfigError("output: expected a directory path string")
    return ScenarioConfig(network=network, model=model, kernel=kernel, mpc=mpc,
                          estimator=EstimatorConfig(kind, decay), output=output, seed=seed,
                          schema_version=version, base_dir=str(base_dir))


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw, base_dir=str(path.parent))


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Fully resolved mapping; ``config_from_dict`` of it rebuilds ``cfg``."""
    net = {"seed": cfg.network.seed}
    if cfg.network.file is not None:
        net["file"] = cfg.network.file
    else:
        gen = cfg.network.generator or GeneratorParams()
        net["generator"] = {f.name: _plain(getattr(gen, f.name)) for f in dataclasses.fields(gen)}
    model = {"alpha": cfg.model.alpha, "beta": cfg.model.beta, "T": cfg.model.T}
    if cfg.model.rho is not None:
        model["rho"] = _plain(cfg.model.rho)
    if cfg.model.x0 is not None:
        model["x0"] = _plain(cfg.model.x0)
    kernel = {"variant": cfg.kernel.variant, "tau": cfg.kernel.tau}
    if cfg.kernel.window is not None:
        kernel["window"] = cfg.kernel.window
    mpc = {f.name: _plain(getattr(cfg.mpc, f.name)) for f in dataclasses.fields(cfg.mpc)}
    estimator = {"kind": cfg.estimator.kind}
    if cfg.estimator.decay is not None:
        estimator["decay"] = cfg.estimator.decay
    return {"schema_version": cfg.schema_version, "seed": cfg.seed, "network": net,
            "kernel": kernel, "model": model, "mpc": mpc, "estimator": estimator,
            "output": cfg.output}


def serialize_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# -- sweeps -----------------------------------------------------------------------------

SWEEP_KEYS = ("alpha", "rho", "beta", "seed", "policy")


@dataclass(frozen=True)
class SweepSpec:
    """Value lists per swept parameter; the sweep is their Cartesian product.

    Parameters left out keep the base scenario's value; ``policy`` defaults
    to the receding-horizon designer alone.
    """

    alpha: Optional[tuple] = None
    rho: Optional[tuple] = None
    beta: Optional[tuple] = None
    seed: Optional[tuple] = None
    policy: tuple = ("rh",)

    def cells(self, base: ScenarioConfig) -> list[dict]:
        axes = {
            "alpha": self.alpha or (base.model.alpha,),
            "rho": self.rho or (base.model.rho,),
            "beta": self.beta or (base.model.beta,),
            "seed": self.seed or (None,),
            "policy": self.policy,
        }
        out = [{}]
        for key in SWEEP_KEYS:
            out = [dict(c, **{key: v}) for c in out for v in axes[key]]
        return out


def sweep_from_dict(raw: dict) -> SweepSpec:
    if not isinstance(raw, dict):
        raise ConfigError("sweep: top level must be a mapping")
    _check_keys(raw, SWEEP_KEYS, "sweep")
    kwargs = {}
    for key, values in raw.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}: expected a nonempty list")
        if key == "policy":
            bad = [v for v in values if v not in POLICIES]
            if bad:
                raise ConfigError(f"sweep.policy: unknown policy {bad[0]!r} (use naive or rh)")
            kwargs[key] = tuple(values)
        elif key == "seed":
            kwargs[key] = tuple(_number(v, f"sweep.seed[{i}]", 0, integer=True) for i, v in enumerate(values))
        elif key == "beta":
            kwargs[key] = tuple(_number(v, f"sweep.beta[{i}]", 0.0) for i, v in enumerate(values))
        else:
            kwargs[key] = tuple(_number(v, f"sweep.{key}[{i}]", 0.0, 1.0) for i, v in enumerate(values))
    return SweepSpec(**kwargs)


def parse_sweep(path) -> SweepSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read sweep spec {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return sweep_from_dict(raw)


def sweep_to_dict(spec: SweepSpec) -> dict:
    return {k: list(getattr(spec, k)) for k in SWEEP_KEYS if getattr(spec, k) is not None}

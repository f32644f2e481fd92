"""Run configuration: defaults, TOML loading, validation.

Defaults are the engine's reference operating point; every value here is
covered by the configuration-fidelity acceptance test, so changing one is
a deliberate act.  A config file supplies partial overrides per section
and CLI flags override the file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .beliefs import LOG_ODDS_LIMIT, NoiseModel
from .errors import ConfigError

DEFAULT_ANCHOR_NOISE = NoiseModel(
    false_pass=0.0, accidental_pass=0.2, coincidental_pass=0.0
)
DEFAULT_EVOLVED_NOISE = NoiseModel(
    false_pass=0.1, accidental_pass=0.2, coincidental_pass=0.25
)


@dataclass(frozen=True)
class ExecutionLimits:
    """Per-execution resource budget for candidate processes."""

    wall_timeout: float = 6.0
    memory_cap: int = 512 * 2**20
    output_cap: int = 1 * 2**20

    def validate(self) -> "ExecutionLimits":
        if self.wall_timeout <= 0:
            raise ConfigError(f"wall_timeout must be positive, got {self.wall_timeout}")
        if self.memory_cap <= 0 or self.output_cap <= 0:
            raise ConfigError("memory_cap and output_cap must be positive")
        return self


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for the chat-completion endpoint."""

    base_url: str = "http://localhost:8000/v1"
    model_name: str = "local-model"
    auth_token_source: str = "COEVO_API_TOKEN"
    temperature: float = 0.8
    debug_temperature: float = 0.2
    max_retries: int = 3
    request_timeout: float = 60.0
    parallelism: int = 4

    def validate(self) -> "ProviderConfig":
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.temperature < 0 or self.debug_temperature < 0:
            raise ConfigError("temperatures must be >= 0")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be positive")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        return self


@dataclass(frozen=True)
class RunConfig:
    """Everything one evolution run depends on besides the problem itself."""

    max_generations: int = 10
    initial_candidates: int = 10
    max_candidates: int = 15
    approaches_per_prompt: int = 5
    init_prompt_count: int = 2
    initial_tests: int = 20
    elitism_rate: float = 0.3
    offspring_rate: float = 0.3
    code_op_rates: dict[str, float] = field(
        default_factory=lambda: {"debug": 0.6, "reimplement": 0.2, "crossover": 0.2}
    )
    test_op_rates: dict[str, float] = field(
        default_factory=lambda: {
            "discriminate": 0.5,
            "edge_case": 0.3,
            "complementary": 0.2,
        }
    )
    divergence_inputs_per_pair: int = 5
    divergence_blocks_per_generation: int = 2
    debug_context_tests: int = 3
    anchor_noise: NoiseModel = DEFAULT_ANCHOR_NOISE
    evolved_noise: NoiseModel = DEFAULT_EVOLVED_NOISE
    learning_rate: float = 1.0
    initial_belief: float = 0.2
    anchoring_enabled: bool = True
    early_stop: bool = False
    log_odds_limit: float = LOG_ODDS_LIMIT
    test_soft_cap: int = 64
    seed: int = 0
    limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    provider: ProviderConfig = field(default_factory=ProviderConfig)

    def validate(self) -> "RunConfig":
        counts = {
            "max_generations": self.max_generations,
            "initial_candidates": self.initial_candidates,
            "max_candidates": self.max_candidates,
            "approaches_per_prompt": self.approaches_per_prompt,
            "init_prompt_count": self.init_prompt_count,
            "initial_tests": self.initial_tests,
            "divergence_inputs_per_pair": self.divergence_inputs_per_pair,
            "debug_context_tests": self.debug_context_tests,
            "test_soft_cap": self.test_soft_cap,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.divergence_blocks_per_generation < 0:
            raise ConfigError("divergence_blocks_per_generation must be >= 0")
        if self.max_candidates < self.initial_candidates:
            raise ConfigError(
                f"max_candidates ({self.max_candidates}) must be >= "
                f"initial_candidates ({self.initial_candidates})"
            )
        if self.approaches_per_prompt * self.init_prompt_count != self.initial_candidates:
            raise ConfigError(
                "approaches_per_prompt * init_prompt_count must equal "
                f"initial_candidates ({self.approaches_per_prompt} * "
                f"{self.init_prompt_count} != {self.initial_candidates})"
            )
        for name in ("elitism_rate", "offspring_rate"):
            rate = getattr(self, name)
            if not 0.0 < rate <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {rate}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 0.0 < self.initial_belief < 1.0:
            raise ConfigError(f"initial_belief must be in (0, 1), got {self.initial_belief}")
        if self.log_odds_limit <= 0:
            raise ConfigError("log_odds_limit must be positive")
        _check_rate_map("code_op_rates", self.code_op_rates, {"debug", "reimplement", "crossover"})
        _check_rate_map(
            "test_op_rates", self.test_op_rates, {"discriminate", "edge_case", "complementary"}
        )
        self.anchor_noise.validate()
        self.evolved_noise.validate()
        self.limits.validate()
        self.provider.validate()
        return self

    def noise_by_class(self) -> dict[str, NoiseModel]:
        return {"anchor": self.anchor_noise, "evolved": self.evolved_noise}

    def snapshot(self) -> dict:
        """JSON-serializable view embedded into the run log."""
        return {
            "max_generations": self.max_generations,
            "initial_candidates": self.initial_candidates,
            "max_candidates": self.max_candidates,
            "approaches_per_prompt": self.approaches_per_prompt,
            "init_prompt_count": self.init_prompt_count,
            "initial_tests": self.initial_tests,
            "elitism_rate": self.elitism_rate,
            "offspring_rate": self.offspring_rate,
            "code_op_rates": dict(self.code_op_rates),
            "test_op_rates": dict(self.test_op_rates),
            "divergence_inputs_per_pair": self.divergence_inputs_per_pair,
            "divergence_blocks_per_generation": self.divergence_blocks_per_generation,
            "debug_context_tests": self.debug_context_tests,
            "anchor_noise": _noise_dict(self.anchor_noise),
            "evolved_noise": _noise_dict(self.evolved_noise),
            "learning_rate": self.learning_rate,
            "initial_belief": self.initial_belief,
            "anchoring_enabled": self.anchoring_enabled,
            "early_stop": self.early_stop,
            "log_odds_limit": self.log_odds_limit,
            "test_soft_cap": self.test_soft_cap,
            "seed": self.seed,
            "limits": {
                "wall_timeout": self.limits.wall_timeout,
                "memory_cap": self.limits.memory_cap,
                "output_cap": self.limits.output_cap,
            },
            "provider": {
                "base_url": self.provider.base_url,
                "model_name": self.provider.model_name,
                "temperature": self.provider.temperature,
                "debug_temperature": self.provider.debug_temperature,
                "max_retries": self.provider.max_retries,
                "request_timeout": self.provider.request_timeout,
                "parallelism": self.provider.parallelism,
            },
        }


def _noise_dict(noise: NoiseModel) -> dict[str, float]:
    return {
        "false_pass": noise.false_pass,
        "accidental_pass": noise.accidental_pass,
        "coincidental_pass": noise.coincidental_pass,
    }


def _check_rate_map(name: str, rates: dict[str, float], expected_keys: set[str]) -> None:
    if set(rates) != expected_keys:
        raise ConfigError(
            f"{name} must have exactly the keys {sorted(expected_keys)}, got {sorted(rates)}"
        )
    for op, rate in rates.items():
        if rate < 0.0:
            raise ConfigError(f"{name}[{op}] must be >= 0, got {rate}")
    total = math.fsum(rates.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{name} must sum to 1, got {total}")


def _noise_from_table(table: dict, fallback: NoiseModel, where: str) -> NoiseModel:
    known = {"false_pass", "accidental_pass", "coincidental_pass"}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return NoiseModel(
        false_pass=float(table.get("false_pass", fallback.false_pass)),
        accidental_pass=float(table.get("accidental_pass", fallback.accidental_pass)),
        coincidental_pass=float(table.get("coincidental_pass", fallback.coincidental_pass)),
    )


def _apply_section(cfg, table: dict, where: str):
    valid = {f.name: f.type for f in fields(cfg)}
    unknown = set(table) - set(valid)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    coerced = {}
    for key, value in table.items():
        current = getattr(cfg, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"[{where}] {key} must be a boolean, got {value!r}")
            coerced[key] = value
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"[{where}] {key} must be an integer, got {value!r}")
            coerced[key] = value
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"[{where}] {key} must be a number, got {value!r}")
            coerced[key] = float(value)
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigError(f"[{where}] {key} must be a string, got {value!r}")
            coerced[key] = value
        elif isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"[{where}] {key} must be a table, got {value!r}")
            coerced[key] = {k: float(v) for k, v in value.items()}
        else:
            raise ConfigError(f"[{where}] {key} cannot be set from a config file")
    return replace(cfg, **coerced)


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Build a validated RunConfig from defaults, a TOML file, and overrides.

    Layout: scalar run settings in [run], sensor rates in [noise.anchor]
    and [noise.evolved], operator rates in [operators.code] and
    [operators.test], resource budgets in [limits], endpoint settings in
    [provider].  Unknown sections or keys are rejected rather than
    silently ignored.
    """
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
        known_sections = {"run", "noise", "operators", "limits", "provider"}
        unknown = set(doc) - known_sections
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        run_table = dict(doc.get("run", {}))
        for managed in ("code_op_rates", "test_op_rates", "limits", "provider"):
            if managed in run_table:
                raise ConfigError(f"[run] may not set {managed}; use its own section")
        cfg = _apply_section(cfg, run_table, "run")
        noise = doc.get("noise", {})
        unknown = set(noise) - {"anchor", "evolved"}
        if unknown:
            raise ConfigError(f"unknown keys in [noise]: {sorted(unknown)}")
        if "anchor" in noise:
            cfg = replace(
                cfg, anchor_noise=_noise_from_table(noise["anchor"], cfg.anchor_noise, "noise.anchor")
            )
        if "evolved" in noise:
            cfg = replace(
                cfg,
                evolved_noise=_noise_from_table(noise["evolved"], cfg.evolved_noise, "noise.evolved"),
            )
        operators = doc.get("operators", {})
        unknown = set(operators) - {"code", "test"}
        if unknown:
            raise ConfigError(f"unknown keys in [operators]: {sorted(unknown)}")
        if "code" in operators:
            cfg = replace(cfg, code_op_rates={k: float(v) for k, v in operators["code"].items()})
        if "test" in operators:
            cfg = replace(cfg, test_op_rates={k: float(v) for k, v in operators["test"].items()})
        if "limits" in doc:
            cfg = replace(cfg, limits=_apply_section(cfg.limits, doc["limits"], "limits"))
        if "provider" in doc:
            cfg = replace(cfg, provider=_apply_section(cfg.provider, doc["provider"], "provider"))
    if overrides:
        allowed = {f.name for f in fields(RunConfig)}
        unknown = set(overrides) - allowed
        if unknown:
            raise ConfigError(f"unknown config overrides: {sorted(unknown)}")
        cfg = replace(cfg, **overrides)
    return cfg.validate()

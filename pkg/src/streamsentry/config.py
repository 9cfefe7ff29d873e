"""Pipeline configuration: one JSON document driving every subsystem.

Layout (all sections optional unless noted; see README for the grammar):

    stream:   manifest (required for run/simulate), speed ("inf" or float)
    window:   window_len, stride, samples_per_window, adjacent_count,
              adjacent_spacing_s
    filter:   vocab (required), tau, horizon, screen_rule
    bus:      per-queue {capacity, overflow}
    backends: captioner / summarizer / reasoner specs
    prompts:  dir (null = packaged defaults)
    decision: threshold, cold_start, re_trigger_period_s
    run:      seed, out

Environment variables STREAMSENTRY_<KIND>_ENDPOINT override the matching
backend endpoint at load time.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends import BACKEND_KINDS, BackendSpec
from .bus import POLICIES, Q1_CAPTIONS, Q2_SUMMARIES, Q3_DECISIONS, QueuePolicy, default_policies
from .core import DEFAULT_DECISION_THRESHOLD, StreamSentryError
from .entity_filter import SCREEN_RULES
from .windowing import WindowConfig

COLD_START_EMPTY = "empty_history"
COLD_START_BLOCK = "block"


class ConfigError(StreamSentryError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.field_path = path


@dataclass(frozen=True)
class FilterConfig:
    vocab_path: str
    tau: int = 3
    horizon: int = 10
    screen_rule: str = "prefix_cut"

    def __post_init__(self):
        if self.screen_rule not in SCREEN_RULES:
            raise ConfigError("filter.screen_rule", f"must be one of {SCREEN_RULES}")
        if self.horizon < 1:
            raise ConfigError("filter.horizon", "must be >= 1")


@dataclass(frozen=True)
class DecisionConfig:
    threshold: float = DEFAULT_DECISION_THRESHOLD
    cold_start: str = COLD_START_EMPTY
    re_trigger_period_s: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("decision.threshold", "must be in [0,1]")
        if self.cold_start not in (COLD_START_EMPTY, COLD_START_BLOCK):
            raise ConfigError(
                "decision.cold_start", f"must be {COLD_START_EMPTY!r} or {COLD_START_BLOCK!r}"
            )
        if self.re_trigger_period_s is not None and self.re_trigger_period_s <= 0:
            raise ConfigError("decision.re_trigger_period_s", "must be > 0 when set")


@dataclass(frozen=True)
class PipelineConfig:
    manifest_path: str = ""
    speed: float = math.inf
    window: WindowConfig = field(default_factory=WindowConfig)
    filter: FilterConfig = field(default_factory=lambda: FilterConfig(vocab_path=""))
    queues: tuple[QueuePolicy, ...] = ()
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    prompts_dir: Optional[str] = None
    decision: DecisionConfig = field(default_factory=DecisionConfig)
    seed: int = 0
    out_path: Optional[str] = None

    def queue_policy(self, name: str) -> QueuePolicy:
        for p in self.queues:
            if p.name == name:
                return p
        return default_policies()[name]

    def to_dict(self) -> dict:
        return {
            "stream": {
                "manifest": self.manifest_path,
                "speed": "inf" if math.isinf(self.speed) else self.speed,
            },
            "window": self.window.to_dict(),
            "filter": {
                "vocab": self.filter.vocab_path,
                "tau": self.filter.tau,
                "horizon": self.filter.horizon,
                "screen_rule": self.filter.screen_rule,
            },
            "bus": {
                p.name: {"capacity": p.capacity, "overflow": p.overflow} for p in self.queues
            },
            "backends": {k: spec.to_dict() for k, spec in self.backends.items()},
            "prompts": {"dir": self.prompts_dir},
            "decision": {
                "threshold": self.decision.threshold,
                "cold_start": self.decision.cold_start,
                "re_trigger_period_s": self.decision.re_trigger_period_s,
            },
            "run": {"seed": self.seed, "out": self.out_path},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")

        stream = doc.get("stream", {})
        speed_raw = stream.get("speed", "inf")
        if speed_raw in ("inf", None):
            speed = math.inf
        else:
            try:
                speed = float(speed_raw)
            except (TypeError, ValueError):
                raise ConfigError("stream.speed", f"not a number: {speed_raw!r}")
            if speed <= 0:
                raise ConfigError("stream.speed", "must be > 0")

        try:
            window = WindowConfig.from_dict(doc.get("window", {}))
        except ValueError as e:
            raise ConfigError("window", str(e))

        filt_doc = doc.get("filter", {})
        default_horizon = 2 * window.samples_per_window
        filt = FilterConfig(
            vocab_path=str(filt_doc.get("vocab", "")),
            tau=int(filt_doc.get("tau", 3)),
            horizon=int(filt_doc.get("horizon", default_horizon)),
            screen_rule=str(filt_doc.get("screen_rule", "prefix_cut")),
        )

        queues = []
        for name, qd in doc.get("bus", {}).items():
            if name not in (Q1_CAPTIONS, Q2_SUMMARIES, Q3_DECISIONS):
                raise ConfigError(f"bus.{name}", "unknown queue")
            overflow = str(qd.get("overflow", default_policies()[name].overflow))
            if overflow not in POLICIES:
                raise ConfigError(f"bus.{name}.overflow", f"must be one of {POLICIES}")
            try:
                queues.append(
                    QueuePolicy(name, capacity=int(qd.get("capacity", 16)), overflow=overflow)
                )
            except ValueError as e:
                raise ConfigError(f"bus.{name}", str(e))

        backends = {}
        for kind, bd in doc.get("backends", {}).items():
            if kind not in BACKEND_KINDS:
                raise ConfigError(f"backends.{kind}", f"unknown backend kind")
            try:
                backends[kind] = BackendSpec.from_dict(kind, bd)
            except (ValueError, TypeError) as e:
                raise ConfigError(f"backends.{kind}", str(e))

        dec_doc = doc.get("decision", {})
        decision = DecisionConfig(
            threshold=float(dec_doc.get("threshold", DEFAULT_DECISION_THRESHOLD)),
            cold_start=str(dec_doc.get("cold_start", COLD_START_EMPTY)),
            re_trigger_period_s=(
                float(dec_doc["re_trigger_period_s"])
                if dec_doc.get("re_trigger_period_s") is not None
                else None
            ),
        )

        run_doc = doc.get("run", {})
        return cls(
            manifest_path=str(stream.get("manifest", "")),
            speed=speed,
            window=window,
            filter=filt,
            queues=tuple(queues),
            backends=backends,
            prompts_dir=doc.get("prompts", {}).get("dir"),
            decision=decision,
            seed=int(run_doc.get("seed", 0)),
            out_path=run_doc.get("out"),
        )

    def validate_for_run(self, base_dir: Optional[Path] = None) -> None:
        """Check everything `run`/`simulate` needs, naming the bad field."""
        base = base_dir or Path(".")

        def _resolve(p: str) -> Path:
            path = Path(p)
            return path if path.is_absolute() else base / path

        if not self.manifest_path:
            raise ConfigError("stream.manifest", "missing manifest path")
        if not _resolve(self.manifest_path).exists():
            raise ConfigError("stream.manifest", f"file not found: {self.manifest_path}")
        if not self.filter.vocab_path:
            raise ConfigError("filter.vocab", "missing vocabulary file")
        if not _resolve(self.filter.vocab_path).exists():
            raise ConfigError("filter.vocab", f"file not found: {self.filter.vocab_path}")
        if self.prompts_dir is not None and not _resolve(self.prompts_dir).is_dir():
            raise ConfigError("prompts.dir", f"directory not found: {self.prompts_dir}")
        for kind in BACKEND_KINDS:
            if kind not in self.backends:
                raise ConfigError(f"backends.{kind}", "backend not configured")


def apply_env_overrides(cfg: PipelineConfig, environ=os.environ) -> PipelineConfig:
    """Point backends at endpoints named by STREAMSENTRY_<KIND>_ENDPOINT."""
    backends = dict(cfg.backends)
    changed = False
    for kind in BACKEND_KINDS:
        endpoint = environ.get(f"STREAMSENTRY_{kind.upper()}_ENDPOINT")
        if endpoint and kind in backends:
            spec = backends[kind]
            backends[kind] = BackendSpec(
                kind=spec.kind,
                mode="remote",
                endpoint=endpoint,
                script=spec.script,
                latency=spec.latency,
                timeout_s=spec.timeout_s,
                retries=spec.retries,
                positive_after_s=spec.positive_after_s,
            )
            changed = True
    if not changed:
        return cfg
    return PipelineConfig(
        manifest_path=cfg.manifest_path,
        speed=cfg.speed,
        window=cfg.window,
        filter=cfg.filter,
        queues=cfg.queues,
        backends=backends,
        prompts_dir=cfg.prompts_dir,
        decision=cfg.decision,
        seed=cfg.seed,
        out_path=cfg.out_path,
    )


def load_config(path, environ=os.environ) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"config is not valid JSON: {e}")
    return apply_env_overrides(PipelineConfig.from_dict(doc), environ=environ)

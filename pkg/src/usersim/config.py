"""Campaign configuration: one JSON file, ``${VAR}`` substitution, flag overrides."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .dialogue import SessionConfig
from .generator import DEFAULT_SYSTEM_PROMPT, GenerationConfig
from .llm import API_KEY_ENV, HTTPBackend, RetryingBackend, RetryPolicy, ScriptedBackend, load_script

ROLES = ("generator", "user", "judge", "responder")
_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    pass


def substitute_env(value: Any, environ: Mapping[str, str] | None = None) -> Any:
    environ = os.environ if environ is None else environ
    if isinstance(value, str):
        def repl(m):
            name = m.group(1)
            if name not in environ:
                raise ConfigError(f"environment variable {name} is not set")
            return environ[name]

        return _ENV_REF.sub(repl, value)
    if isinstance(value, list):
        return [substitute_env(v, environ) for v in value]
    if isinstance(value, dict):
        return {k: substitute_env(v, environ) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class BackendSettings:
    kind: str
    base_url: str | None = None
    model_label: str | None = None
    temperature: float | None = None
    script_path: str | None = None
    api_key_env: str = API_KEY_ENV

    def __post_init__(self):
        if self.kind not in ("http", "scripted"):
            raise ConfigError(f"backend kind must be 'http' or 'scripted', not {self.kind!r}")
        if self.kind == "scripted" and not self.script_path:
            raise ConfigError("scripted backends need script_path")
        if self.kind == "http" and not (self.base_url and self.model_label):
            raise ConfigError("http backends need base_url and model_label")

    @property
    def label(self) -> str:
        return self.model_label or ("scripted" if self.kind == "scripted" else "model")


@dataclass(frozen=True)
class CampaignConfig:
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    backends: Mapping[str, BackendSettings] = field(default_factory=dict)
    catalog_path: str | None = None
    template_path: str | None = None
    output_dir: str = "out"
    parallel_sessions: int = 1
    seed: int = 0
    clock: str = "wall"
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.parallel_sessions < 1:
            raise ConfigError("parallel_sessions must be >= 1")
        if self.clock not in ("wall", "logical"):
            raise ConfigError("clock must be 'wall' or 'logical'")
        unknown = set(self.backends) - set(ROLES)
        if unknown:
            raise ConfigError(f"unknown backend roles: {sorted(unknown)}")

    def backend(self, role: str) -> BackendSettings:
        try:
            return self.backends[role]
        except KeyError:
            raise ConfigError(f"no backend configured for role {role!r}") from None

    def with_overrides(self, **overrides) -> "CampaignConfig":
        cfg = self
        gen = {k: overrides.pop(k) for k in ("batch_size",) if overrides.get(k) is not None}
        if gen:
            cfg = replace(cfg, generation=replace(cfg.generation, **gen))
        ses = {k: overrides.pop(k) for k in ("max_turns",) if overrides.get(k) is not None}
        if ses:
            cfg = replace(cfg, session=replace(cfg.session, **ses))
        top = {k: v for k, v in overrides.items() if v is not None}
        return replace(cfg, **top) if top else cfg


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base / p))


def config_from_dict(data: Mapping[str, Any], base_dir: Path | str = ".", environ=None) -> CampaignConfig:
    data = substitute_env(dict(data), environ)
    base = Path(base_dir)
    try:
        backends = {}
        for role, raw in (data.get("backends") or {}).items():
            raw = dict(raw)
            raw["script_path"] = _resolve(raw.get("script_path"), base)
            backends[role] = BackendSettings(**raw)

        gen = dict(data.get("generation") or {})
        if "model_label" not in gen and "generator" in backends:
            gen["model_label"] = backends["generator"].label
        gen.setdefault("system_prompt", DEFAULT_SYSTEM_PROMPT)
        retry = dict(data.get("retry") or {})
        return CampaignConfig(
            generation=GenerationConfig(**gen),
            session=SessionConfig(**(data.get("session") or {})),
            backends=backends,
            catalog_path=_resolve(data.get("catalog_path"), base),
            template_path=_resolve(data.get("template_path"), base),
            output_dir=_resolve(data.get("output_dir", "out"), base),
            parallel_sessions=int(data.get("parallel_sessions", 1)),
            seed=int(data.get("seed", 0)),
            clock=data.get("clock", "wall"),
            retry=RetryPolicy(**retry),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, environ=None) -> CampaignConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, path.parent, environ)


def make_backend(settings: BackendSettings, retry: RetryPolicy, script=None):
    """Instantiate a backend; ``script`` overrides the file contents for scripted roles."""
    if settings.kind == "scripted":
        if script is None:
            try:
                script = load_script(settings.script_path)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot load script {settings.script_path}: {exc}") from exc
        if isinstance(script, dict):
            script = script.get("replies", [])
        return ScriptedBackend(script, model_label=settings.label)
    backend = HTTPBackend(
        settings.base_url,
        settings.model_label,
        api_key_env=settings.api_key_env,
        temperature=settings.temperature,
    )
    return RetryingBackend(backend, retry)

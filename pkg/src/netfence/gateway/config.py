"""Service configuration and the file-backed resources it points at."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from ..dispatch import Topic
from ..errors import ConfigError, ParseError
from ..fence import NetworkFence
from ..rules import Rule, parse_rulebook
from ..tracker import MIN_SALT_BYTES

DEFAULT_SALT_ENV = "NETFENCE_SALT"


@dataclass(frozen=True)
class Config:
    fences_path: Path
    rules_path: Path
    topics_path: Path
    data_dir: Path
    messages_path: Optional[Path] = None
    trackers_path: Optional[Path] = None
    salt_env: str = DEFAULT_SALT_ENV
    salt_file: Optional[Path] = None
    window_span_s: float = 60.0
    dedup_window_h: float = 24.0
    staleness_sweep_s: float = 120.0
    listen: str = "127.0.0.1:8080"
    timezone: str = "UTC"
    event_log_max_bytes: int = 10 * 1024 * 1024

    @classmethod
    def from_json(cls, obj: Mapping[str, Any], base_dir: Path = Path(".")) -> "Config":
        def path(key: str, required: bool = True) -> Optional[Path]:
            value = obj.get(key)
            if value is None:
                if required:
                    raise ConfigError(f"config is missing {key!r}")
                return None
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        known = {"fences", "rules", "topics", "data_dir", "messages", "trackers", "salt_env", "salt_file",
                 "window_span_s", "dedup_window_h", "staleness_sweep_s", "listen", "timezone",
                 "event_log_max_bytes"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        try:
            return cls(
                fences_path=path("fences"),
                rules_path=path("rules"),
                topics_path=path("topics"),
                data_dir=path("data_dir"),
                messages_path=path("messages", False),
                trackers_path=path("trackers", False),
                salt_env=str(obj.get("salt_env", DEFAULT_SALT_ENV)),
                salt_file=path("salt_file", False),
                window_span_s=float(obj.get("window_span_s", 60.0)),
                dedup_window_h=float(obj.get("dedup_window_h", 24.0)),
                staleness_sweep_s=float(obj.get("staleness_sweep_s", 120.0)),
                listen=str(obj.get("listen", "127.0.0.1:8080")),
                timezone=str(obj.get("timezone", "UTC")),
                event_log_max_bytes=int(obj.get("event_log_max_bytes", 10 * 1024 * 1024)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from None

    @classmethod
    def load(cls, path: os.PathLike | str) -> "Config":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_json(obj, path.parent)

    @property
    def listen_address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"bad listen address {self.listen!r}") from None

    @property
    def tz(self) -> ZoneInfo:
        try:
            return ZoneInfo(self.timezone)
        except (ZoneInfoNotFoundError, ValueError):
            raise ConfigError(f"unknown timezone {self.timezone!r}") from None

    def load_salt(self, environ: Mapping[str, str] = os.environ) -> bytes:
        if self.salt_file is not None:
            try:
                text = self.salt_file.read_text(encoding="utf-8").strip()
            except OSError as exc:
                raise ConfigError(f"cannot read salt file: {exc.strerror}") from None
            source = "salt file"
        else:
            text = environ.get(self.salt_env, "").strip()
            source = f"${self.salt_env}"
            if not text:
                raise ConfigError(f"no salt: set {source} to at least {2 * MIN_SALT_BYTES} hex characters")
        try:
            salt = bytes.fromhex(text)
        except ValueError:
            raise ConfigError(f"{source} is not valid hex") from None
        if len(salt) < MIN_SALT_BYTES:
            raise ConfigError(f"{source} is too short: need at least {2 * MIN_SALT_BYTES} hex characters")
        return salt


@dataclass(frozen=True)
class Resources:
    """Everything reloadable: fences, rules, topics, message bodies, tracker SSIDs."""

    fences: tuple[NetworkFence, ...] = ()
    rules: tuple[Rule, ...] = ()
    topics: tuple[Topic, ...] = ()
    content: Mapping[str, str] = field(default_factory=dict)
    trackers: Mapping[str, str] = field(default_factory=dict)

    @property
    def rules_by_id(self) -> dict[str, Rule]:
        return {r.id: r for r in self.rules}

    def validate(self) -> None:
        fence_ids = {f.id for f in self.fences}
        rule_ids = [r.id for r in self.rules]
        if len(set(rule_ids)) != len(rule_ids):
            raise ConfigError("duplicate rule ids in rulebook")
        for r in self.rules:
            if r.action.message_id not in self.content:
                raise ConfigError(f"rule {r.id!r} presents unknown message {r.action.message_id!r}")
        for t in self.topics:
            missing_f = set(t.fence_ids) - fence_ids
            missing_r = set(t.rule_ids) - set(rule_ids)
            if missing_f or missing_r:
                raise ConfigError(
                    f"topic {t.id!r} references unknown "
                    + ", ".join([*(f"fence {x!r}" for x in sorted(missing_f)), *(f"rule {x!r}" for x in sorted(missing_r))])
                )
            if t.enter_message is not None and t.enter_message not in self.content:
                raise ConfigError(f"topic {t.id!r} enter_message {t.enter_message!r} is not defined")


def _read_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def load_resources(config: Config) -> Resources:
    content: dict[str, str] = {}
    if config.messages_path is not None:
        raw = _read_json(config.messages_path, "messages")
        if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
            raise ConfigError("messages file must map message ids to strings")
        content = dict(raw)
    trackers: dict[str, str] = {}
    if config.trackers_path is not None:
        raw = _read_json(config.trackers_path, "trackers")
        if not isinstance(raw, dict):
            raise ConfigError("trackers file must map tracker ids to SSIDs")
        trackers = {str(k): str(v) for k, v in raw.items()}
    try:
        fences = tuple(NetworkFence.from_json(o) for o in _read_json(config.fences_path, "fences"))
        topics = tuple(Topic.from_json(o) for o in _read_json(config.topics_path, "topics"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fence or topic definition: {exc}") from None
    try:
        text = config.rules_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read rulebook {config.rules_path}: {exc.strerror}") from None
    try:
        parsed = parse_rulebook(text)
    except ParseError as exc:
        raise ConfigError(f"{config.rules_path}: {exc}") from None
    rules = tuple(
        replace(r, action=replace(r.action, payload_template=content.get(r.action.message_id, "")))
        for r in parsed
    )
    res = Resources(fences, rules, topics, content, trackers)
    res.validate()
    return res

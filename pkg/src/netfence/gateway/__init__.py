"""Operational shell: configuration, persistence, HTTP API and CLI."""

from .config import Config, Resources, load_resources
from .service import Gateway, ProcessResult

__all__ = ["Config", "Gateway", "ProcessResult", "Resources", "load_resources"]

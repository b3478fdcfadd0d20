"""Interactive annotation HTTP service."""

from .app import app, create_app
from .sessions import Session, SessionSettings, SessionStore, rebuild_session_state

__all__ = [
    "app",
    "create_app",
    "Session",
    "SessionSettings",
    "SessionStore",
    "rebuild_session_state",
]

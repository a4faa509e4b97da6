"""Confidential dossier sharing through an untrusted synchronizer."""

from .agent import Agent, AgentConfig
from .crypto import SUITE_ID, Identity, gen_identity
from .model import Acl, Dossier, RedactedView, redact
from .session import LocalSession, TcpSession
from .synchronizer import Synchronizer, SyncState

__all__ = [
    "Acl", "Agent", "AgentConfig", "Dossier", "Identity", "LocalSession", "RedactedView",
    "SUITE_ID", "SyncState", "Synchronizer", "TcpSession", "gen_identity", "redact",
]

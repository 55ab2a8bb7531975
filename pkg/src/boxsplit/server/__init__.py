from boxsplit.server.app import ModelRegistry, create_app, registry_from_checkpoints, stub_registry
from boxsplit.server.sessions import SessionStore

__all__ = ["ModelRegistry", "SessionStore", "create_app", "registry_from_checkpoints", "stub_registry"]

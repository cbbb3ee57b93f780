"""Exception hierarchy shared across the service."""

from __future__ import annotations


class LightCIError(Exception):
    """Base class for all service-specific errors."""


# --- configuration ---------------------------------------------------------

class ConfigError(LightCIError):
    pass


class ParseError(ConfigError):
    """The config document is not well-formed."""


class ValidationError(ConfigError):
    """An invariant is violated; carries the offending field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# --- webhook gateway -------------------------------------------------------

class MissingSignature(LightCIError):
    """A secret is configured but the delivery carries no signature header."""


class MalformedPayload(LightCIError):
    """Payload is not valid JSON or a required field is missing."""

    def __init__(self, field: str):
        super().__init__(f"missing or invalid field: {field}")
        self.field = field


# --- scheduler -------------------------------------------------------------

class WaitQueueFull(LightCIError):
    pass


class IllegalState(LightCIError):
    """A task was driven through an edge outside the legal transition set."""


# --- source manager --------------------------------------------------------

class CloneFailed(LightCIError):
    def __init__(self, repo_id: str, diagnostics: str):
        super().__init__(f"clone of {repo_id} failed: {diagnostics}")
        self.repo_id = repo_id
        self.diagnostics = diagnostics


class UnknownCommit(LightCIError):
    pass


class LockTimeout(LightCIError):
    pass


# --- modulator -------------------------------------------------------------

class DuplicateName(LightCIError):
    pass


class ManifestError(LightCIError):
    pass


class UnknownPlugin(LightCIError):
    pass


class NotStaging(LightCIError):
    pass


class CommentFailed(LightCIError):
    pass


class ReportFailed(LightCIError):
    pass


# --- builder / inspector ---------------------------------------------------

class RootCollision(LightCIError):
    """A build root for this task id already exists (task-id reuse bug)."""


class WorkspaceMissing(LightCIError):
    """Pipeline started for a task with no derived workspace (scheduler bug)."""

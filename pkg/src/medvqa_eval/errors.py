"""Error hierarchy shared by all harness modules.

Every error carries a stable machine-readable ``code`` so CLI and API
consumers can switch on it without parsing messages.
"""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all harness errors."""

    code = "HARNESS_ERROR"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    @property
    def module(self) -> str:
        return type(self).__module__.rsplit(".", 1)[-1]

    def to_record(self) -> dict:
        rec = {"code": self.code, "module": self.module, "message": str(self)}
        if self.context:
            rec["context"] = self.context
        return rec


class ConfigError(HarnessError):
    code = "CONFIG_ERROR"


class IOFailure(HarnessError):
    code = "IO_ERROR"

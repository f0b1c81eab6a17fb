"""Shared error base. Every service failure carries a stable machine-readable
code that the wire layer maps to protocol error responses."""

from __future__ import annotations


class TicketError(Exception):
    code = "internal"

    def __init__(self, message: str = "", *, code: str | None = None):
        super().__init__(message or self.__class__.code)
        if code is not None:
            self.code = code


class InvalidArgument(TicketError):
    code = "invalid-argument"


class UnknownGroup(TicketError):
    code = "unknown-group"

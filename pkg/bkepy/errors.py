from __future__ import annotations

from typing import Any, Optional


class PkiError(RuntimeError):
    """Base class for every failure raised by the toolkit.

    ``step`` names the protocol checkpoint that failed, ``index`` the butterfly
    index the failure is attributed to (batch operations), and ``original``
    the underlying exception when one error is translated into another.
    """

    def __init__(
        self,
        message: str,
        *,
        step: Optional[str] = None,
        index: Optional[int] = None,
        original: Optional[BaseException] = None,
    ) -> None:
        super().__init__(message)
        self.step = step
        self.index = index
        self.original = original

    def with_context(self, *, step: Optional[str] = None, index: Optional[int] = None) -> "PkiError":
        if step is not None and self.step is None:
            self.step = step
        if index is not None and self.index is None:
            self.index = index
        return self


class OffCurveInput(PkiError):
    pass


class UnknownStrength(PkiError):
    pass


class DivisionByZero(PkiError, ZeroDivisionError):
    pass


class RngFailure(PkiError):
    pass


class DegenerateSharedPoint(PkiError):
    pass


class DegenerateKey(PkiError):
    pass


class DegenerateNonce(PkiError):
    pass


class InsufficientMaterial(PkiError):
    pass


class MacMismatch(PkiError):
    pass


class BadPcaSignature(PkiError):
    pass


class KeyMismatch(PkiError):
    pass


class UnauthorizedIssuer(PkiError):
    pass


class InvalidValidity(PkiError):
    pass


class MalformedEncoding(PkiError, ValueError):
    def __init__(self, message: str, offset: Optional[int] = None, **kwargs: Any) -> None:
        super().__init__(message, **kwargs)
        self.offset = offset


class NotEnrolled(PkiError):
    pass


class BadChain(PkiError):
    def __init__(self, message: str, reason: Any = None, **kwargs: Any) -> None:
        super().__init__(message, **kwargs)
        self.reason = reason


class BadSignature(PkiError):
    pass


class UnexpectedMessage(PkiError):
    pass

"""
Exception hierarchy shared by every sub-package.
Each error carries the exit code the CLI returns for it.
"""
from typing import Dict, Optional


class DidaError(Exception):
    """Base error: a human-readable detail plus a stable CLI exit code."""
    exit_code = 2

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class ShapeError(DidaError):
    pass


class GradientError(DidaError):
    pass


class ConfigError(DidaError):
    pass


class DataError(DidaError):
    pass


class IdxFormatError(DataError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class IdxTrailingDataError(IdxFormatError):
    pass


class CheckpointError(DidaError):
    pass


class OutputDirError(DidaError):
    pass


class DivergenceError(DidaError):
    """Non-finite loss during training. Exit code 3."""
    exit_code = 3

    def __init__(self, detail: str, lr: float, grad_norms: Optional[Dict[str, float]] = None):
        super().__init__(detail)
        self.lr = lr
        self.grad_norms = grad_norms or {}

    def __str__(self) -> str:
        worst = sorted(self.grad_norms.items(), key=lambda kv: -kv[1] if kv[1] == kv[1] else float("-inf"))[:5]
        norms = ", ".join(f"{name}={value:.3e}" for name, value in worst)
        return f"{self.detail} (lr={self.lr:.3e}; grad norms: {norms or 'n/a'})"

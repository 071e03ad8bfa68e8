from __future__ import annotations

from pathlib import Path


class HopRelError(ValueError):
    """Базовая ошибка пакета; наследует ValueError, как и остальные проверки."""


class InputError(HopRelError):
    pass


class ParseError(InputError):
    def __init__(self, path: str | Path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = int(line_no)
        super().__init__(f"{self.path}:{self.line_no}: {message}")


class DimensionError(HopRelError):
    pass


class ContractError(HopRelError):
    pass


class NumericsError(ContractError):
    pass

__all__ = [
    "PolyfwError",
    "ContractViolation",
    "MatrixFormatError",
    "SpecError",
    "UnknownSolverError",
]


class PolyfwError(ValueError):
    pass


class ContractViolation(PolyfwError):
    pass


class MatrixFormatError(PolyfwError):
    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class SpecError(PolyfwError):
    pass


class UnknownSolverError(PolyfwError):
    def __init__(self, name, valid):
        self.name = name
        self.valid = sorted(valid)
        super().__init__(
            f"unknown solver {name!r}; valid names are: {', '.join(self.valid)}"
        )

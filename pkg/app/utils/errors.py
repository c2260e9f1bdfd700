"""
Exception hierarchy shared by the library, the CLI and the HTTP service
"""


class ObjcodeError(Exception):
    """Base class for all py_objcode errors"""
    exit_code = 1


class ContractViolation(ObjcodeError, ValueError):
    """Raised when a precondition, shape or dimension contract is broken"""
    exit_code = 4


class StorageError(ObjcodeError):
    """Raised when a file cannot be read or written"""
    exit_code = 3

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class DataFormatError(ObjcodeError):
    """Raised for a malformed line in a key-point file"""
    exit_code = 5

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class TrainingDiverged(ObjcodeError):
    """Raised when a loss component stops being finite"""
    exit_code = 6

    def __init__(self, component: str, step: int, value: float):
        self.component = component
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite loss component '{component}' at step {step}: {value}"
        )


class UsageError(ObjcodeError):
    """Raised for command-line input that does not fit the requested command"""
    exit_code = 2

"""Exception hierarchy shared by the simulator, kernels and CLI."""


class MteError(Exception):
    """Base class for every error raised by mte_sim."""


class EncodingError(MteError):
    """A CSR field does not fit its bit range."""


class DecodeError(MteError):
    """A packed word or immediate does not decode to a defined value."""


class IllegalRegister(MteError):
    """A register index is outside the architectural register file."""


class IllegalInstruction(MteError):
    """Operand types or element widths are not valid for the instruction."""


class UnsupportedTypeCombination(IllegalInstruction):
    """Input element width wider than the output element width."""


class IllegalState(MteError):
    """An instruction ran before the state it depends on was configured."""


class MemoryFault(MteError):
    """Access outside the flat memory."""


class ConfigError(MteError):
    """Machine configuration is inconsistent or incomplete."""


class WorkloadError(MteError):
    """A workload description is malformed or inconsistent."""


class ShapeError(MteError):
    """Operand shapes do not conform."""


class ParseError(MteError):
    """A workload suite file does not follow the schema."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class UsageError(MteError):
    """Invalid command-line usage."""

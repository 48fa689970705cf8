class IpfixError(Exception):
    """Base class for every error raised by the toolkit"""


class ValidationError(IpfixError, ValueError):
    """Invalid configuration, arguments or contract violation (CLI exit code 2)"""


class InstanceFormatError(ValidationError):
    """Malformed instance data; `field` names the offending entry"""
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        return


class SizeGuardError(ValidationError):
    pass


class FixingContractError(ValidationError):
    """A fixing decision referred to a variable that is not free"""


class ModelFormatError(ValidationError):
    pass


class DatasetFormatError(ValidationError):
    pass


class TrainingDivergedError(IpfixError):
    """The training loss became NaN"""
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"loss diverged (NaN) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        return

class SpecificationError(ValueError):
    """A request that is inconsistent with the objects it refers to."""


class CalibrationError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


class IngestionError(ValueError):
    """Malformed or mismatched input files."""


class ConfigurationError(ValueError):
    pass

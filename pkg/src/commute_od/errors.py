class ConfigError(Exception):
    """Bad or incomplete configuration; the run cannot start."""


class DataQualityError(Exception):
    """Input data violates a contract the pipeline cannot repair (e.g. overlapping tracts)."""


class StageInputError(ConfigError):
    """A stage was asked to run without the artifact it consumes."""

class ConfigError(ValueError):
    """Invalid construction parameters or incompatible inputs."""


class SamplingError(RuntimeError):
    """A sampler ran out of candidates."""


class TrainingError(RuntimeError):
    """Training could not continue (for example a non-finite loss)."""

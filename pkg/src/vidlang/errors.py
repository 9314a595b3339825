"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration: bad dims, unknown variant, missing artifact."""


class DataError(Exception):
    """Problem with input data: missing files, bad corpora."""


class ManifestError(DataError):
    """Malformed manifest record; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")

"""Error types mapped to CLI exit codes (data errors vs backend errors)."""


class CofeError(Exception):
    pass


class DataError(CofeError):
    """Invalid dataset/corpus/run state: exit code 2."""


class BackendError(CofeError):
    """Remote backend failure after retries, or protocol violation: exit code 3."""

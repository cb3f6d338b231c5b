"""Error type shared by every module.

Each failure carries a short machine-readable ``code`` so the command line
can map it to an exit status without parsing messages.
"""

# codes that indicate a bad configuration or violated hypothesis (exit 2)
CONFIG_CODES = frozenset({
    "HYPOTHESIS",
    "BAD_CONFIG",
    "BAD_DIMENSION",
    "BAD_TIME_ORDER",
    "UNSUPPORTED_VARIANT",
    "PAST_DEGENERACY",
    "NOT_POSITIVE_CASE",
    "EMPTY_PROBE_SET",
})


class LabError(Exception):
    """A failure raised by the laboratory, tagged with a stable code."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message

    @property
    def is_config_error(self):
        return self.code in CONFIG_CODES

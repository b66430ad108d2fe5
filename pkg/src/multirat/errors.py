"""Exception hierarchy shared by the models, the policy engine and the CLI."""


class MultiRatError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MultiRatError, ValueError):
    """A configuration value violates its documented invariants."""


class FragmentationRequired(MultiRatError, ValueError):
    """The payload does not fit in a single LoRaWAN frame at this spreading factor."""

    def __init__(self, payload_bytes, limit_bytes, spreading_factor):
        self.payload_bytes = payload_bytes
        self.limit_bytes = limit_bytes
        self.spreading_factor = spreading_factor
        super().__init__(
            f"{payload_bytes} B exceeds the {limit_bytes} B single-frame limit at SF{spreading_factor}; "
            "fragment the payload first"
        )


class PayloadExceeded(MultiRatError, ValueError):
    """The payload exceeds the NB-IoT per-message cap."""


class ProtocolViolation(MultiRatError):
    """An event is not legal in the current NB-IoT modem state."""


class NoFeasiblePlan(MultiRatError):
    """No candidate transmission plan satisfies the message constraints.

    ``candidates`` holds every evaluated plan, each carrying its rejection
    reasons, so callers can report why nothing was selected.
    """

    def __init__(self, candidates):
        self.candidates = list(candidates)
        detail = "; ".join(
            f"{c.technology}: {', '.join(c.reasons) or 'n/a'}" for c in self.candidates
        )
        super().__init__(f"no feasible transmission plan ({detail or 'no candidates'})")

    @property
    def reasons(self):
        return {c.technology: list(c.reasons) for c in self.candidates}


class RankDeficiencyError(MultiRatError, ValueError):
    """Calibration samples cannot resolve every requested constant."""

    def __init__(self, unresolvable):
        self.unresolvable = list(unresolvable)
        super().__init__(
            "calibration samples do not determine: " + ", ".join(self.unresolvable)
        )


class SchemaError(MultiRatError, ValueError):
    """A profile or scenario document failed validation.

    ``path`` is the JSON path of the offending field, e.g. ``$.traffic[0].interval_s``.
    """

    def __init__(self, message, path="$"):
        self.path = path
        super().__init__(f"{path}: {message}")

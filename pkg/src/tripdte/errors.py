class ProtocolAbort(Exception):
    """A party stopped the protocol. `site` names the check that failed."""

    def __init__(self, site: str, reason: str = ""):
        super().__init__(f"{site}: {reason}" if reason else site)
        self.site = site
        self.reason = reason
        self.phase = None  # set by the phase the party was in


class TransportError(ProtocolAbort):
    def __init__(self, reason: str):
        super().__init__("transport", reason)


class ConfigError(ValueError):
    pass


class TokenReuseError(RuntimeError):
    pass

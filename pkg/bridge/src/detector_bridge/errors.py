"""Bridge error hierarchy; the CLI maps these to exit codes."""


class BridgeError(Exception):
    """Base class for everything the bridge can raise on purpose."""


class VideoError(BridgeError):
    """The video cannot be opened or decoded. Exit code 2."""


class BridgeConfigError(BridgeError):
    """The configuration is malformed or names unknown seats. Exit code 3."""

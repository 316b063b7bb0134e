"""Exception hierarchy shared across the engine."""


class SceneSynthError(Exception):
    """Base class for every error raised by this package."""


# geometry
class NonPositiveScale(SceneSynthError, ValueError):
    pass


class NonFinite(SceneSynthError, ValueError):
    pass


class BehindCamera(SceneSynthError, ValueError):
    pass


# assets / collection
class EmptyText(SceneSynthError, ValueError):
    pass


class EmptyRepository(SceneSynthError, ValueError):
    pass


class UnresolvableAsset(SceneSynthError, LookupError):
    pass


# layout
class OutOfExtent(SceneSynthError, ValueError):
    pass


class NoFreeRegion(SceneSynthError, RuntimeError):
    pass


class FullyBehindCamera(SceneSynthError, ValueError):
    pass


class UnknownInstance(SceneSynthError, KeyError):
    pass


# optimizer / planner
class NoVerdicts(SceneSynthError, ValueError):
    pass


class UnknownActor(SceneSynthError, KeyError):
    pass


class TooFewFrames(SceneSynthError, ValueError):
    pass


# export
class TooManyInstances(SceneSynthError, ValueError):
    pass


class ConfigError(SceneSynthError, ValueError):
    pass


# gateway
class GatewayError(SceneSynthError):
    pass


class SchemaError(GatewayError, ValueError):
    pass


# collect-time name for a decomposition that never validated
GatewaySchemaError = SchemaError


class GatewayTimeout(GatewayError, TimeoutError):
    pass


class BudgetExhausted(GatewayError):
    pass


class TransportError(GatewayError):
    def __init__(self, message, attempts=()):
        super().__init__(message)
        self.attempts = list(attempts)


class UnknownRole(GatewayError, KeyError):
    pass

"""Exception hierarchy shared across the package."""


class FedgraphError(Exception):
    """Base class for all package errors."""


class ShapeError(FedgraphError):
    """Operands have incompatible dimensions."""


class NumericError(FedgraphError):
    """A numeric invariant was violated (NaN/Inf where finite values are required)."""


class IngestError(FedgraphError):
    """A dataset file could not be parsed."""


class PartitionError(FedgraphError):
    """Partitioning produced an unusable client (e.g. no labeled training nodes)."""


class PlanError(FedgraphError):
    """A sampled computation graph could not be constructed."""


class ModelError(FedgraphError):
    """Model state is inconsistent with the computation graph."""


class ExchangeError(FedgraphError):
    """Cross-client embedding exchange failed."""


class PrivacyViolationError(ExchangeError):
    """A request asked for layer-1 data, which never crosses clients."""


class AuthorizationError(ExchangeError):
    """A request asked for a node that is not a registered boundary neighbor."""


class AggregationError(FedgraphError):
    """Global weight aggregation got malformed inputs."""


class RoundAbortError(FedgraphError):
    """A training round failed; global weights were left unchanged."""


class StateError(FedgraphError):
    """Controller or model state does not match what the operation expects."""


class ConfigError(FedgraphError):
    """A run configuration is invalid."""


class CacheError(FedgraphError):
    """A binary cache or checkpoint file is malformed."""

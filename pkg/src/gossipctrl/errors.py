"""Exception types raised across the library.

Every error carries enough context in its message to act on without a
debugger; a few keep structured fields for programmatic checks.
"""


class GossipCtrlError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(GossipCtrlError):
    """Array arguments have inconsistent shapes."""


class IndexOutOfRange(GossipCtrlError):
    """An index argument falls outside its documented range."""


class NumericalFailure(GossipCtrlError):
    """A numerical routine (SVD, solve) failed to converge."""


class NotConnected(GossipCtrlError):
    """Topology construction could not produce a connected graph."""


class BoundViolated(GossipCtrlError):
    """A certified inequality failed at a concrete index.

    Fields: k (power / round), index (agent or block), lhs, rhs.
    """

    def __init__(self, k: int, index: int, lhs: float, rhs: float, what: str = "bound"):
        self.k = k
        self.index = index
        self.lhs = lhs
        self.rhs = rhs
        super().__init__(f"{what} violated at k={k}, i={index}: {lhs:.6e} > {rhs:.6e}")


class NotStable(GossipCtrlError):
    """The closed loop has spectral radius >= 1; no certificate exists."""


class IllConditioned(GossipCtrlError):
    """Similarity transform too ill-conditioned to certify reliably."""


class RankDeficient(GossipCtrlError):
    """Controllability-style matrix numerically rank deficient."""


class NotStabilizable(GossipCtrlError):
    """Riccati iteration failed to converge; pair (A, B) looks unstabilizable."""


class MarginExhausted(GossipCtrlError):
    """Requested perturbation size consumes the entire stability margin."""


class UnsupportedCost(GossipCtrlError):
    """Analytic gradient requested for a cost family without one."""


class NotInSet(GossipCtrlError):
    """Candidate policy parameters violate the constraint-set radii."""


class Diverged(GossipCtrlError):
    """State norm left the certified envelope by a wide factor."""


class InsufficientData(GossipCtrlError):
    """Not enough exploration rounds for the requested moment lag."""


class EstimateUnusable(GossipCtrlError):
    """Identified system too far from truth for the downstream guarantees."""


class EmptyGrid(GossipCtrlError):
    """Hindsight-benchmark candidate grid is empty."""


class IncompleteTrace(GossipCtrlError):
    """Experiment trace is missing rounds or agents needed by the consumer."""


class NonPositiveRegret(GossipCtrlError):
    """Log-log slope fit received a regret that is not positive."""


class ConfigError(GossipCtrlError):
    """Experiment config failed schema validation; message names the field."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"config field '{field}' invalid or missing"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class VersionMismatch(GossipCtrlError):
    """Artifact schema version does not match this library version."""

"""Exception hierarchy shared by all simulator modules."""


class SimError(Exception):
    """Base class for all simulator errors."""


class SpecError(SimError):
    """A node, pod, or flow definition violates its declared constraints."""


class ScenarioError(SimError):
    """A scenario file failed to parse or validate, or an event references
    an entity that does not exist at the point the event runs."""


class UnknownEntityError(SimError):
    """Lookup of a node, pod, VF, or flow that does not exist."""


class ReservationRejected(SimError):
    """The node daemon refused an assignment: feasibility was lost between
    filtering and reservation. State is unchanged."""


class SetupFailure(SimError):
    """A pod network setup step failed; all completed steps were rolled
    back and the reservation was released before this was raised."""


class InvariantViolation(SimError):
    """An accounting invariant broke. Always a bug or a corrupted state,
    never a normal outcome."""

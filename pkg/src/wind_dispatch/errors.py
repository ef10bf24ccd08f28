"""Exception hierarchy for wind-dispatch.

Error Handling:
- Pure model functions raise DomainError (a ValueError) on out-of-domain input
- The torque reference raises SingularityError at C_p stationary points; the
  farm controller catches it and falls back per generator
- Scenario loading raises ConfigError, which the CLI maps to exit code 1
- The engine raises IntegrationAbort on non-finite state; run() turns it into
  a failed RunResult carrying the partial trace (exit code 2)
"""


class WindDispatchError(Exception):
    """Base class for every error raised by this package."""


class DomainError(WindDispatchError, ValueError):
    """A model function was evaluated outside its physical domain."""


class SingularityError(DomainError):
    """The torque reference is undefined because dC_p/dλ vanishes."""


class ConfigError(WindDispatchError):
    """A scenario file is unreadable, malformed, or describes an infeasible setup."""


class IntegrationAbort(WindDispatchError):
    """Integration hit a non-finite or out-of-domain state.

    Attributes:
        time: Simulation time at which the abort happened.
        generator: 1-based generator index, or None for farm-level quantities.
        quantity: Name of the offending quantity.
    """

    def __init__(self, message: str, time: float | None = None, generator: int | None = None, quantity: str | None = None):
        super().__init__(message)
        self.time = time
        self.generator = generator
        self.quantity = quantity

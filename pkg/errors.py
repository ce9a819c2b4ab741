from __future__ import annotations


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class ShapeMismatchError(SimulationError, ValueError):
    pass


class NonFiniteError(SimulationError, ValueError):
    pass


class EmptyShardError(SimulationError, ValueError):
    pass


class PartitionError(SimulationError, ValueError):
    pass


class IdxFormatError(SimulationError, ValueError):
    pass


class ProtocolError(SimulationError, ValueError):
    pass


class ShadowDesyncError(SimulationError, RuntimeError):
    pass


class StrategyError(SimulationError, RuntimeError):
    def __init__(self, client_id: int, round_idx: int, reason: str) -> None:
        super().__init__(f"client {client_id} failed in round {round_idx}: {reason}")
        self.client_id = client_id
        self.round = round_idx
        self.reason = reason


class ConfigError(SimulationError, ValueError):
    def __init__(self, errors: list[str]) -> None:
        self.errors = [e for e in errors if e] or ["invalid configuration"]
        super().__init__("; ".join(self.errors))


class ScenarioError(SimulationError, RuntimeError):
    def __init__(self, scenario: str, cause: BaseException) -> None:
        super().__init__(f"[{scenario}] {cause}")
        self.scenario = scenario
        self.cause = cause

"""Exception hierarchy. Every error carries a stable ``code`` for the CLI."""


class ModSbSGError(Exception):
    code = "error"


class ConfigError(ModSbSGError):
    code = "config_error"


class EmptyLeaderSet(ConfigError):
    code = "empty_leader_set"


class LeaderSetCoversAllPlayers(ConfigError):
    code = "leader_set_covers_all_players"


class UnknownPlayerId(ConfigError):
    code = "unknown_player_id"


class ParseError(ConfigError):
    code = "parse_error"


class SchemaViolation(ConfigError):
    code = "schema_violation"

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingPlant(ConfigError):
    code = "missing_plant"


class UnknownPlantName(MissingPlant):
    code = "unknown_plant_name"


class MalformedTopology(ConfigError):
    code = "malformed_topology"


class DegenerateSpread(ConfigError):
    code = "degenerate_spread"


class NonFiniteUtility(ModSbSGError, ValueError):
    code = "non_finite_utility"


class NonFiniteSample(ModSbSGError, ValueError):
    code = "non_finite_sample"


class NonFiniteGradient(ModSbSGError, ValueError):
    code = "non_finite_gradient"


class NegativePower(ModSbSGError, ValueError):
    code = "negative_power"


class StateOutOfRange(ModSbSGError, ValueError):
    code = "state_out_of_range"


class NoVisitedCells(ModSbSGError):
    code = "no_visited_cells"


class WrongLeaderCount(ModSbSGError, ValueError):
    code = "wrong_leader_count"


class MissingCoalition(ModSbSGError, ValueError):
    code = "missing_coalition"


class ActionCountMismatch(ModSbSGError, ValueError):
    code = "action_count_mismatch"


class InsufficientSamples(ModSbSGError):
    code = "insufficient_samples"


class IllConditioned(ModSbSGError):
    code = "ill_conditioned"


class NotFitted(ModSbSGError):
    code = "not_fitted"


class MissingCheckpoint(ModSbSGError):
    code = "missing_checkpoint"


class ProtocolMismatch(ModSbSGError):
    code = "protocol_mismatch"

from .drivers import (
    CLASS_PARAMS,
    P_YIELD,
    SIGMA_V,
    DriverParams,
    GapViolationError,
    InternalState,
    Intention,
    Trait,
    idm_accel,
    sample_driver_params,
    sample_internal_state,
)
from .world import (
    AgentKind,
    AgentState,
    ConfigError,
    InteractionType,
    SimConfig,
    WorldState,
    add_agent,
    classify_interaction,
    effective_gap,
    empty_world,
    footprint_overlaps,
    reset_world,
    step_pedestrian,
    step_world,
    trace_records,
)

"""dragfly: deterministic human-drone shared-control simulator.

A virtual marker dragged by a human exerts a spring-damper force on a
simulated drone; an admittance law with angle-dependent damping turns that
force (plus an obstacle repulsive field) into commanded-position
perturbations around a reference that is either the marker itself (FPVI) or
the projection onto a local-horizon RRT* path toward a goal (APVI). Sessions
are fully deterministic and support record/replay and a networked UI.
"""

from .forces import (AdmittanceParams, AdmittanceState, FieldParams, MarkerEstimate,
                     admittance_step, angle_to_segment, compose_virtual_force,
                     kf_update, repulsive_force, user_force, variable_damping)
from .planner import PlannerParams, PlannerPath, advance_segment, local_goal, node_cost, plan, project_reference
from .session import (InputEvent, Mode, ReplayReport, Session, SessionConfig,
                      Snapshot, Trace, record, replay, rmse)
from .voxelmap import PointCloudSample, VoxelMap, load_voxels
from .world import (Box, DroneDynamics, DroneState, Environment, SensorConfig,
                    simulate_depth_scan, step_drone)

__version__ = "0.1.0"

__all__ = [
    "AdmittanceParams", "AdmittanceState", "FieldParams", "MarkerEstimate",
    "admittance_step", "angle_to_segment", "compose_virtual_force", "kf_update",
    "repulsive_force", "user_force", "variable_damping",
    "PlannerParams", "PlannerPath", "advance_segment", "local_goal", "node_cost",
    "plan", "project_reference",
    "InputEvent", "Mode", "ReplayReport", "Session", "SessionConfig", "Snapshot",
    "Trace", "record", "replay", "rmse",
    "PointCloudSample", "VoxelMap", "load_voxels",
    "Box", "DroneDynamics", "DroneState", "Environment", "SensorConfig",
    "simulate_depth_scan", "step_drone",
    "__version__",
]

"""Desk-scale rigid-body simulation and depth-image prediction."""
from .world import (BodyShape, Diverged, PushAction, RigidBody, SimTrace, SimulationError,
                    SolverSettings, World, box_mesh, replay_actions, rotation_angle, settle)

__all__ = ["BodyShape", "Diverged", "PushAction", "RigidBody", "SimTrace", "SimulationError",
           "SolverSettings", "World", "box_mesh", "replay_actions", "rotation_angle", "settle"]

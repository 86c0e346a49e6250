"""Trajectory-user linking attack on GPS trip datasets, with truncation and evaluation tools."""

from .core import (
    AttackParams,
    ClusterAssignment,
    GpsPoint,
    Trip,
    TripDataset,
    haversine_m,
    trips_overlap_in_time,
)

__version__ = "0.1.0"

__all__ = [
    "AttackParams",
    "ClusterAssignment",
    "GpsPoint",
    "Trip",
    "TripDataset",
    "haversine_m",
    "trips_overlap_in_time",
]

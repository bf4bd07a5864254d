"""Dwell-time analytics for noninvasive Bluetooth visitor monitoring.

Pipeline: sightings -> presence intervals -> visits and trajectories ->
length-of-stay statistics, survival curves and crowd-density thresholds,
plus a seeded visitor simulator for closed-loop validation.
"""

__version__ = "0.1.0"

from .core import (DEFAULT_NODES, DayGroup, SightingEvent, anonymize_device, day_group,
                   validate_stream)
from .exceptions import (ClosedDay, ConfigError, DegenerateInput, DwellscopeError, EmptyInput,
                         EmptyVisit, FlatCurve, InsufficientData, InvalidMac, LengthMismatch,
                         NoSamples, UnsortedInput)
from .sessionize import (PresenceInterval, Sessionizer, VisitBuilder, VisitRecord, build_visits,
                         sessionize, sessionize_frame, split_days, visits_frame)
from .simulator import GroundTruth, SimConfig, occupancy_now, simulate
from .stats import (BoxplotSummary, DensityThresholdEstimator, DwellOccupancyCurve,
                    OccupancySeries, SpearmanResult, SurvivalCurve, ThresholdPoints,
                    boxplot_summary, dwell_occupancy_curve, extract_thresholds,
                    occupancy_series, spearman_rho, stay_by_entry_hour, survival_curve)
from .trajectory import (TransitionMatrix, TransitionMatrixEstimator, Trajectory,
                         build_trajectory, transition_matrix, travel_time_stats)

"""Trace-driven simulator for curtailment-aware federated training."""

from .accounting import EnergyLedger, RunReport, SitePowerModel, finalize, record_interval
from .coordinator import RoundConfig, aggregate, commit, mode_of, run_round, run_solo
from .datamgr import ShardAssignment, ShardTable, assign_shards, merge_progress, remaining_rows, stride_partition
from .provisioner import HysteresisParams, SiteLifecycle, begin_drain, observe_signal
from .replay import Verdict, replay_check
from .sim import EventLog, Scenario, SiteSpec, run
from .trace import CarbonTrace, CurtailmentConfig, curtailment_at, integrate_emissions, moer_at, parse_trace, windows
from .trainer import ModelState, SiteUpdate, TrainerSpec, generate_row, local_train

__version__ = "0.1.0"

__all__ = [
    "EnergyLedger",
    "RunReport",
    "SitePowerModel",
    "finalize",
    "record_interval",
    "RoundConfig",
    "aggregate",
    "commit",
    "mode_of",
    "run_round",
    "run_solo",
    "ShardAssignment",
    "ShardTable",
    "assign_shards",
    "merge_progress",
    "remaining_rows",
    "stride_partition",
    "HysteresisParams",
    "SiteLifecycle",
    "begin_drain",
    "observe_signal",
    "Verdict",
    "replay_check",
    "EventLog",
    "Scenario",
    "SiteSpec",
    "run",
    "CarbonTrace",
    "CurtailmentConfig",
    "curtailment_at",
    "integrate_emissions",
    "moer_at",
    "parse_trace",
    "windows",
    "ModelState",
    "SiteUpdate",
    "TrainerSpec",
    "generate_row",
    "local_train",
]

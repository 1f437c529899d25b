"""Privacy-preserving aggregation over simulated synchronous-transmission networks."""

from .aggspec import AggregationSpec, Family, demask, mask, noise_for, plain_aggregate, recompute_mask
from .baselines import lagrange_at_zero, nsss_round, ppmp_round, sss_round
from .dfke import KeyTable, RefreshPolicy, dfke_round, key_refresh_due
from .lipi import detect_missing, lipi_round, run_periodic
from .stnet import (
    FailureEvent,
    FailurePhase,
    SimConfig,
    Topology,
    complete,
    glossy_flood,
    line,
    minicast_round,
    random_geometric,
    restricted_minicast,
    ring,
    topology_from_spec,
)
from .trace import AggregateResult, RoundPhase, RoundStatus, RoundTrace

__all__ = [
    "AggregateResult", "AggregationSpec", "FailureEvent", "FailurePhase", "Family", "KeyTable",
    "RefreshPolicy", "RoundPhase", "RoundStatus", "RoundTrace", "SimConfig", "Topology",
    "complete", "demask", "detect_missing", "dfke_round", "glossy_flood", "key_refresh_due",
    "lagrange_at_zero", "line", "lipi_round", "mask", "minicast_round", "noise_for", "nsss_round",
    "plain_aggregate", "ppmp_round", "random_geometric", "recompute_mask", "restricted_minicast", "ring",
    "run_periodic", "sss_round", "topology_from_spec",
]

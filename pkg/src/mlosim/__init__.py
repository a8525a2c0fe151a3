"""Trace-driven simulator of Wi-Fi multi-link channel access (SLO, MLO-STR, MLO-NSTR, MLO-STR+)."""

from .bonding import BondedLink, punctured_txop, select_primary, txop_payload
from .engine import DEFAULT_TIMING, PacketRecord, TimingConfig, dcf_contend, run
from .metrics import ExperimentSummary, decompose, export_cdf, summarize
from .model import IidParams, th_closed_form
from .policies import PolicyId
from .trace import BinaryTrace, OccupancyBin, RssiSample, binarize, gen_iid_trace, gen_onoff_trace
from .traffic import ArrivalSchedule, batched_arrivals, poisson_arrivals

__version__ = "0.1.0"

__all__ = [
    "ArrivalSchedule", "BinaryTrace", "BondedLink", "DEFAULT_TIMING", "ExperimentSummary", "IidParams",
    "OccupancyBin", "PacketRecord", "PolicyId", "RssiSample", "TimingConfig", "batched_arrivals", "binarize",
    "dcf_contend", "decompose", "export_cdf", "gen_iid_trace", "gen_onoff_trace", "poisson_arrivals",
    "punctured_txop", "run", "select_primary", "summarize", "th_closed_form", "txop_payload",
]

"""Packet-level simulation of video downloads competing with bulk TCP flows,
plus the chunk-sizing model that keeps pipelined downloads near fair share."""

from .chunking import ChunkPlan, chunk_plan, get_chunk_size, predict_efficiency, predict_throughput
from .dataplane import BulkFlow, DownloadPolicy, SegmentRequest, VideoSession
from .metrics import FlowTrace, SessionSummary, fair_share_pct, jain_fairness, unfairness
from .runner import build, run, sweep
from .scenario import Scenario, ScenarioError, load_preset, parse_scenario
from .sim import MSS, BottleneckLink, BottleneckQueue, Packet, Simulator
from .tcp import TcpConnection, TcpFlowState

__version__ = "0.1.0"

__all__ = [
    "BottleneckLink",
    "BottleneckQueue",
    "BulkFlow",
    "ChunkPlan",
    "DownloadPolicy",
    "FlowTrace",
    "MSS",
    "Packet",
    "Scenario",
    "ScenarioError",
    "SegmentRequest",
    "SessionSummary",
    "Simulator",
    "TcpConnection",
    "TcpFlowState",
    "VideoSession",
    "build",
    "chunk_plan",
    "fair_share_pct",
    "get_chunk_size",
    "jain_fairness",
    "load_preset",
    "parse_scenario",
    "predict_efficiency",
    "predict_throughput",
    "run",
    "sweep",
    "unfairness",
]

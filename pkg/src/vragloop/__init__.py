"""Agentic visual retrieval loop: action grammar, evidence-pinned context, MaxSim retrieval,
crop tool, rewards and SFT data tooling."""

from .grammar import Answer, AgentResponse, Crop, Search, parse_response
from .loop import LoopConfig, run_trajectory
from .retrieval import HashEmbedder, RetrievalIndex, rank, read_index, write_index
from .reward import score_trajectory
from .trajectory import Query, Trajectory

__all__ = [
    "AgentResponse",
    "Answer",
    "Crop",
    "HashEmbedder",
    "LoopConfig",
    "Query",
    "RetrievalIndex",
    "Search",
    "Trajectory",
    "parse_response",
    "rank",
    "read_index",
    "run_trajectory",
    "score_trajectory",
    "write_index",
]

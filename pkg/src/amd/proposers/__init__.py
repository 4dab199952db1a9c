"""Backends producing candidate heuristics from sampled parents"""

from amd.proposers.base import (
    Parent,
    ProposalRejectedError,
    ProposalRequest,
    Proposer,
    ProposerUnavailableError,
)
from amd.proposers.llm import LlmEndpointConfig, LlmProposer, llm_propose
from amd.proposers.prompts import MissingTemplateError, StrategyPreset, render_prompts
from amd.proposers.symbolic import SymbolicProposer, symbolic_propose

__all__ = [
    "LlmEndpointConfig",
    "LlmProposer",
    "MissingTemplateError",
    "Parent",
    "ProposalRejectedError",
    "ProposalRequest",
    "Proposer",
    "ProposerUnavailableError",
    "StrategyPreset",
    "SymbolicProposer",
    "llm_propose",
    "render_prompts",
    "symbolic_propose",
]

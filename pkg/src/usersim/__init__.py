"""Synthetic user personas, simulated task-oriented dialogues and their analytics."""

from .analytics import (
    CrossTab,
    Distribution,
    DistributionProfiler,
    DiversityScore,
    SessionMetrics,
    attribute_distribution,
    chi_square,
    cross_tab,
    distribution_over_time,
    diversity_score,
    goal_outcome_table,
    session_metrics,
    shannon_entropy,
)
from .dialogue import DialogueSession, GoalVerdict, SessionConfig, Turn, run_session
from .generator import AttributeStatistics, GenerationConfig, generate_batch, generate_persona
from .llm import ChatRequest, ChatResponse, HTTPBackend, RetryPolicy, ScriptedBackend, with_retry
from .persona import Persona, PersonaTemplate, parse_persona, template_default, validate_persona

__version__ = "0.1.0"

"""Lipschitz RMax: value transfer between tabular tasks through model distances."""

from .agents import Agent, AgentConfig, TaskLibrary
from .dp import solve_optimistic_q, solve_pair_fixed_point, value_iteration, vi_iteration_budget
from .envs import GridSpec, TaskDistribution, build_mdp, sample_task
from .lifelong import LifelongConfig, RunRecord, diagnostics, run_lifelong, summarize
from .mdp import KnownSet, LearnedTask, TabularMdp, validate
from .metrics import DistanceConfig, dhat_dissimilarity, dhat_model, exact_dissimilarity, model_pseudometric

__version__ = "0.1.0"

"""Entanglement-assisted simultaneous-message protocol for the n x n cell
problem: exact and closed-form simulators, relation checkers, the derived
nonlocality game and classical baselines."""

from .analytic import AnalyticSampler, Outcome, joint_branch_distribution, run_S_analytic, sample_u
from .gf2m import GF2Vec, add, index_to_vec, inner, vec_to_index
from .instances import (
    Instance,
    PromiseReport,
    alpha,
    cell,
    check_promises,
    deserialize,
    sample_product,
    sample_promised,
    serialize,
    stream,
)
from .protocol import CostReport, auto_repetitions, run_classical_baseline, run_pnn_protocol
from .relations import P11Answer, PnnAnswer, check_p11, check_pnn, t_n

__version__ = "0.1.0"

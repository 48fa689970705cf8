"""Early fixing: pause ADMM every beta iterations, fix confident variables, shrink the problem"""
import logging
from enum import Enum, IntEnum
from time import perf_counter
from typing import Any, Callable, Dict, List, Optional, Tuple
import numpy as np
from errors import ValidationError
from instances import IpInstance
from lpbox_admm import AdmmParams, LpBoxAdmm, Observer, Solution, binarize
from policy import HeuristicPolicy, LearnedPolicy, load_policy
from reformulate import FixMask, apply_fixing, lift_solution

logger = logging.getLogger(__name__)

Policy = Callable[[np.ndarray], np.ndarray]

MODES = ("plain", "heuristic", "learned")


class Action(IntEnum):
    FIX0 = 0
    FIX1 = 1
    STAY = 2


class Termination(str, Enum):
    CONVERGED = "converged"
    ALL_FIXED = "all_fixed"
    BUDGET = "budget"


class RunConfig:
    """
    Early fixing run

    Args:
        beta: iterations per block between two policy evaluations
        delta: fixing threshold in [0.5, 1]
        T_prime: iteration budget of the whole run
        policy: callable mapping a u x beta window matrix to u probabilities; None never fixes
    """
    def __init__(self, beta: int = 100, delta: float = 0.9, T_prime: int = 20000,
                 policy: Optional[Policy] = None):
        if beta < 2:
            raise ValidationError(f"beta must be >= 2, got {beta}")
        if not 0.5 <= delta <= 1.0:
            raise ValidationError(f"delta must lie in [0.5, 1], got {delta}")
        if T_prime < 0:
            raise ValidationError(f"T_prime must be non-negative, got {T_prime}")
        policy_beta = getattr(policy, "beta", None)
        if policy_beta is not None and policy_beta != beta:
            raise ValidationError(f"policy was trained on windows of {policy_beta}, run uses beta={beta}")
        self.beta = int(beta)
        self.delta = float(delta)
        self.T_prime = int(T_prime)
        self.policy = policy
        return

    @property
    def mode(self) -> str:
        return "plain" if self.policy is None else getattr(self.policy, "name", "custom")

    def to_dict(self) -> Dict[str, Any]:
        return {"beta": self.beta, "delta": self.delta, "T_prime": self.T_prime, "mode": self.mode}


def make_policy(mode: str, model_path=None) -> Optional[Policy]:
    match mode:
        case "plain":
            return None
        case "heuristic":
            return HeuristicPolicy()
        case "learned":
            if model_path is None:
                raise ValidationError("learned mode needs a model file")
            return LearnedPolicy(load_policy(model_path))
    raise ValidationError(f"unknown mode {mode!r}, expected one of {MODES}")


class RoundRecord:
    def __init__(self, iteration: int, fixed0: int, fixed1: int, remaining: int):
        self.iteration = iteration
        self.fixed0 = fixed0
        self.fixed1 = fixed1
        self.remaining = remaining
        return

    def to_dict(self) -> Dict[str, int]:
        return {"iteration": self.iteration, "fixed0": self.fixed0, "fixed1": self.fixed1, "remaining": self.remaining}


class EpisodeLog:
    """Per-round fixing counts, per-iteration objective and how the episode ended"""
    def __init__(self, n: int):
        self.n = n
        self.rounds: List[RoundRecord] = []
        self.objectives: List[float] = []
        self.termination = Termination.BUDGET
        self.solver_time = 0.0
        self.total_time = 0.0
        self.mask: Optional[FixMask] = None
        return

    @property
    def total_fixed(self) -> int:
        return sum(r.fixed0 + r.fixed1 for r in self.rounds)

    @property
    def remaining(self) -> int:
        return self.rounds[-1].remaining if self.rounds else self.n

    def to_dict(self, timing: bool = True) -> Dict[str, Any]:
        return {
            "n": self.n,
            "termination": self.termination.value,
            "rounds": [r.to_dict() for r in self.rounds],
            "objectives": self.objectives,
            "status": self.mask.to_list() if self.mask is not None else None,
            "solver_time": self.solver_time if timing else None,
            "total_time": self.total_time if timing else None
        }


def decide_actions(p, delta: float) -> np.ndarray:
    """FIX1 where p > delta, FIX0 where p < 1 - delta, STAY otherwise (boundaries stay)"""
    if not 0.5 <= delta <= 1.0:
        raise ValidationError(f"delta must lie in [0.5, 1], got {delta}")
    p = np.asarray(p, dtype=np.float64)
    actions = np.full(p.shape, Action.STAY, dtype=np.int8)
    actions[p < 1.0 - delta] = Action.FIX0
    actions[p > delta] = Action.FIX1
    return actions


def run(inst: IpInstance, cfg: RunConfig, admm_params: AdmmParams,
        observer: Optional[Observer] = None) -> Tuple[Solution, EpisodeLog]:
    """
    ADMM with early fixing

    Every beta iterations the policy scores the traces of all free variables;
    variables above delta (below 1 - delta) are fixed to 1 (0), substituted into
    the instance and removed from the ADMM iterates. The run ends on ADMM
    convergence, when no variable is left free, or after T_prime iterations.

    Args:
        inst: the original instance
        cfg: run configuration with the policy
        admm_params: solver parameters; T is superseded by cfg.T_prime
        observer: per-iteration callback (t, x) with x over the currently free variables
    """
    start = perf_counter()
    policy_time = 0.0
    log = EpisodeLog(inst.n)
    mask = FixMask.all_free(inst.n)
    current = inst
    session = LpBoxAdmm(inst, admm_params, cfg.beta, observer)
    while session.state.iter < cfg.T_prime:
        if session.step():
            log.termination = Termination.CONVERGED
            break
        log.objectives.append(current.objective(binarize(session.state.x)))
        t = session.state.iter
        if cfg.policy is None or t % cfg.beta or t >= cfg.T_prime:
            continue
        tick = perf_counter()
        actions = decide_actions(cfg.policy(session.trace.window()), cfg.delta)
        policy_time += perf_counter() - tick
        chosen = np.flatnonzero(actions != Action.STAY)
        if chosen.size:
            originals = mask.reduced_to_original[chosen]
            fixes = dict(zip(originals.tolist(), (actions[chosen] == Action.FIX1).astype(int).tolist()))
            current, mask = apply_fixing(current, mask, fixes)
            session.shrink(current, actions == Action.STAY)
        record = RoundRecord(t, int(np.count_nonzero(actions == Action.FIX0)),
                             int(np.count_nonzero(actions == Action.FIX1)), mask.u)
        log.rounds.append(record)
        logger.debug("round %d at t=%d: fixed %d to 0, %d to 1, %d free",
                     len(log.rounds) - 1, t, record.fixed0, record.fixed1, record.remaining)
        if mask.u == 0:
            log.termination = Termination.ALL_FIXED
            break
    session.report_cg()
    x_binary = lift_solution(binarize(session.state.x), mask)
    objective = inst.objective(x_binary)
    log.total_time = perf_counter() - start
    log.solver_time = log.total_time - policy_time
    log.mask = mask
    logger.debug("early fixing (%s): %d iterations, %s, %d of %d fixed, objective %.6g",
                 cfg.mode, session.state.iter, log.termination.value, mask.total_fixed, inst.n, objective)
    solution = Solution(x_binary, objective, session.state.iter, log.total_time, session.is_converged,
                        session.trace, session.state.cg_warnings, session.residuals)
    return solution, log

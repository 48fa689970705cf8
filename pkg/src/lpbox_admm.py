"""l2-box ADMM for binary programs, with per-variable iterate traces"""
import logging
from json import load
from math import sqrt
from time import perf_counter
from typing import Any, Callable, Dict, List, Optional
import numpy as np
from scipy.sparse.linalg import LinearOperator, cg
from errors import ValidationError
from instances import IpInstance

logger = logging.getLogger(__name__)

Observer = Callable[[int, np.ndarray], None]


class AdmmParams:
    """
    Parameters of the l2-box ADMM solver

    Args:
        rho1, rho2, rho3: initial penalties of the box, sphere and constraint copies
        mu: penalty growth factor applied after every iteration
        rho_max: cap for all penalties
        tol: convergence tolerance on the infinity norm of the primal residuals
        T: maximum number of iterations (0 returns the rounded initialisation)
        cg_tol: relative tolerance of the conjugate gradient x-update
        cg_max_iters: iteration cap of the conjugate gradient x-update
        seed: seed of the uniform random initialisation of x
    """
    FIELDS = ("rho1", "rho2", "rho3", "mu", "rho_max", "tol", "T", "cg_tol", "cg_max_iters", "seed")

    def __init__(self, rho1: float = 1e-2, rho2: float = 1e-2, rho3: float = 1e-2, mu: float = 1.01,
                 rho_max: float = 1e3, tol: float = 1e-4, T: int = 20000, cg_tol: float = 1e-6,
                 cg_max_iters: int = 200, seed: int = 0):
        if min(rho1, rho2, rho3) <= 0:
            raise ValidationError("penalties rho1, rho2, rho3 must be positive")
        if mu < 1:
            raise ValidationError(f"mu must be >= 1, got {mu}")
        if tol <= 0:
            raise ValidationError(f"tol must be positive, got {tol}")
        if T < 0:
            raise ValidationError(f"T must be non-negative, got {T}")
        self.rho1 = float(rho1)
        self.rho2 = float(rho2)
        self.rho3 = float(rho3)
        self.mu = float(mu)
        self.rho_max = float(rho_max)
        self.tol = float(tol)
        self.T = int(T)
        self.cg_tol = float(cg_tol)
        self.cg_max_iters = int(cg_max_iters)
        self.seed = int(seed)
        return

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "AdmmParams":
        unknown = set(values) - set(cls.FIELDS)
        if unknown:
            raise ValidationError(f"unknown ADMM parameters: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_settings(cls, settings, params_file=None, **overrides) -> "AdmmParams":
        """Settings category 'admm', then an optional JSON params file, then explicit overrides"""
        values = settings.category("admm")
        if params_file is not None:
            with open(params_file, "r") as f:
                values.update(load(f))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def replace(self, **changes) -> "AdmmParams":
        values = self.to_dict()
        values.update(changes)
        return AdmmParams(**values)


class AdmmState:
    """
    Iterates of one ADMM run over the u currently free variables

    y3/z3 live in constraint space (length m) and exist only when the instance
    has constraints.
    """
    def __init__(self, x, y1, y2, z1=None, z2=None, y3=None, z3=None, iter: int = 0,
                 rho=(1e-2, 1e-2, 1e-2), constraint_residual: float = 0.0, cg_warnings: int = 0):
        self.x = np.asarray(x, dtype=np.float64)
        self.y1 = np.asarray(y1, dtype=np.float64)
        self.y2 = np.asarray(y2, dtype=np.float64)
        self.z1 = np.zeros_like(self.x) if z1 is None else np.asarray(z1, dtype=np.float64)
        self.z2 = np.zeros_like(self.x) if z2 is None else np.asarray(z2, dtype=np.float64)
        self.y3 = y3
        self.z3 = z3
        self.iter = int(iter)
        self.rho = tuple(float(r) for r in rho)
        self.constraint_residual = float(constraint_residual)
        self.cg_warnings = int(cg_warnings)
        return

    @property
    def u(self) -> int:
        return self.x.shape[0]

    def primal_residual(self) -> float:
        return max(np.max(np.abs(self.x - self.y1), initial=0.0),
                   np.max(np.abs(self.x - self.y2), initial=0.0),
                   self.constraint_residual)

    def restrict(self, keep: np.ndarray) -> "AdmmState":
        """Drop the coordinates not in `keep`; constraint-space copies are untouched"""
        return AdmmState(self.x[keep], self.y1[keep], self.y2[keep], self.z1[keep], self.z2[keep],
                         self.y3, self.z3, self.iter, self.rho, self.constraint_residual, self.cg_warnings)


class SolverTrace:
    """
    Ring buffer of the last `beta` iterates of every free variable plus flip counts

    A flip is a strict crossing of 0.5 between two consecutive iterates.
    """
    def __init__(self, u: int, beta: int):
        if beta < 1:
            raise ValidationError(f"trace capacity must be positive, got {beta}")
        self.beta = int(beta)
        self.buffer = np.zeros((u, self.beta))
        self.flips = np.zeros(u, dtype=np.int64)
        self.last = np.full(u, 0.5)
        self.count = 0
        return

    def append(self, x: np.ndarray) -> None:
        if self.count > 0:
            self.flips += (self.last - 0.5) * (x - 0.5) < 0
        self.buffer[:, self.count % self.beta] = x
        self.last = np.array(x, dtype=np.float64)
        self.count += 1
        return

    @property
    def length(self) -> int:
        return min(self.count, self.beta)

    def window(self) -> np.ndarray:
        """u x length matrix of the retained iterates, oldest first"""
        order = np.arange(self.count - self.length, self.count) % self.beta
        return self.buffer[:, order]

    def retain(self, keep: np.ndarray) -> None:
        self.buffer = self.buffer[keep]
        self.flips = self.flips[keep]
        self.last = self.last[keep]
        return


class Solution:
    """Binary result in original indexing; objective includes the instance offset"""
    def __init__(self, x_binary: np.ndarray, objective: float, iterations: int, wall_time: float,
                 converged: bool, trace: Optional[SolverTrace] = None, cg_warnings: int = 0,
                 residuals: Optional[List[float]] = None):
        self.x_binary = np.asarray(x_binary, dtype=np.int8)
        self.objective = float(objective)
        self.iterations = int(iterations)
        self.wall_time = float(wall_time)
        self.converged = bool(converged)
        self.trace = trace
        self.cg_warnings = int(cg_warnings)
        self.residuals = residuals if residuals is not None else []
        return

    def to_dict(self, timing: bool = True) -> Dict[str, Any]:
        return {
            "x": [int(v) for v in self.x_binary],
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_ms": round(self.wall_time * 1000.0, 3) if timing else None
        }


def project_box(v: np.ndarray) -> np.ndarray:
    return np.clip(v, 0.0, 1.0)


def project_sphere_l2(v: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    """
    Projection onto {x : ||x - 1/2||_2 = sqrt(n)/2}

    The centre itself has no unique projection; it maps to the sphere point in the
    direction of the first coordinate.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0] if n is None else n
    centred = v - 0.5
    norm = np.linalg.norm(centred)
    if norm == 0.0:
        centred = np.zeros_like(v)
        centred[0] = 1.0
        norm = 1.0
    return 0.5 + (sqrt(n) / 2.0) * centred / norm


def binarize(x: np.ndarray) -> np.ndarray:
    """Round at 0.5, ties going to 1"""
    return (np.asarray(x) >= 0.5).astype(np.int8)


def initial_state(inst: IpInstance, params: AdmmParams) -> AdmmState:
    rng = np.random.default_rng(params.seed)
    x = rng.uniform(0.0, 1.0, inst.n)
    y3 = z3 = None
    constraint_residual = 0.0
    if inst.constraints is not None:
        Cx = inst.constraints.C @ x
        y3 = inst.constraints.project(Cx)
        z3 = np.zeros(inst.m)
        constraint_residual = np.max(np.abs(Cx - y3), initial=0.0)
    return AdmmState(x, project_box(x), project_sphere_l2(x, inst.n), y3=y3, z3=z3,
                     rho=(params.rho1, params.rho2, params.rho3), constraint_residual=constraint_residual)


def _x_operator(inst: IpInstance, rho) -> LinearOperator:
    """(rho1 + rho2) I + rho3 C'C + sign (A + A') as a matrix-free operator"""
    rho1, rho2, rho3 = rho
    C = inst.constraints.C if inst.constraints is not None else None
    A = inst.A if inst.is_quadratic else None
    sign = inst.sign

    def matvec(v):
        v = np.ravel(v)
        out = (rho1 + rho2) * v
        if C is not None:
            out = out + rho3 * (C.T @ (C @ v))
        if A is not None:
            out = out + sign * (A @ v + A.T @ v)
        return out
    return LinearOperator((inst.n, inst.n), matvec=matvec, dtype=np.float64)


def admm_step(state: AdmmState, inst: IpInstance, params: AdmmParams,
              trace: Optional[SolverTrace] = None) -> AdmmState:
    """
    One sweep: box copy, sphere copy, constraint copy, x-update by CG, dual ascent, penalty growth

    The x-update solves the stationarity system of the augmented Lagrangian of
    sign * (x'Ax + b'x) with the three splitting copies.
    """
    if state.u != inst.n:
        raise ValidationError(f"state has {state.u} variables, instance has {inst.n}")
    rho1, rho2, rho3 = state.rho
    block = inst.constraints
    y1 = project_box(state.x + state.z1 / rho1)
    y2 = project_sphere_l2(state.x + state.z2 / rho2, inst.n)
    rhs = rho1 * y1 + rho2 * y2 - inst.sign * inst.b - state.z1 - state.z2
    y3 = None
    if block is not None:
        y3 = block.project(block.C @ state.x + state.z3 / rho3)
        rhs = rhs + block.C.T @ (rho3 * y3 - state.z3)
    cg_warnings = state.cg_warnings
    if inst.n > 0:
        x, info = cg(_x_operator(inst, state.rho), rhs, x0=state.x, rtol=params.cg_tol, atol=0.0,
                     maxiter=params.cg_max_iters)
        if info != 0:
            cg_warnings += 1
    else:
        x = state.x.copy()
    r1 = x - y1
    r2 = x - y2
    z1 = state.z1 + rho1 * r1
    z2 = state.z2 + rho2 * r2
    z3 = None
    constraint_residual = 0.0
    if block is not None:
        r3 = block.C @ x - y3
        z3 = state.z3 + rho3 * r3
        constraint_residual = np.max(np.abs(r3), initial=0.0)
    rho = tuple(min(r * params.mu, params.rho_max) for r in state.rho)
    if trace is not None:
        trace.append(x)
    return AdmmState(x, y1, y2, z1, z2, y3, z3, state.iter + 1, rho, constraint_residual, cg_warnings)


def converged(state: AdmmState, tol: float) -> bool:
    return state.primal_residual() < tol


class LpBoxAdmm:
    """
    A running ADMM session over one (possibly shrinking) instance

    Args:
        inst: instance the iterates refer to
        params: solver parameters
        beta: capacity of the per-variable trace ring buffers
        observer: called as observer(t, x) after every iteration on the solving thread
    """
    def __init__(self, inst: IpInstance, params: AdmmParams, beta: int = 100,
                 observer: Optional[Observer] = None):
        self.inst = inst
        self.params = params
        self.state = initial_state(inst, params)
        self.trace = SolverTrace(inst.n, beta)
        self.observer = observer
        self.residuals: List[float] = []
        self.is_converged = False
        return

    def step(self) -> bool:
        """Advance one iteration; returns whether the run has converged"""
        self.state = admm_step(self.state, self.inst, self.params, self.trace)
        if self.observer is not None:
            self.observer(self.state.iter, self.state.x)
        residual = self.state.primal_residual()
        self.residuals.append(residual)
        self.is_converged = residual < self.params.tol
        return self.is_converged

    def shrink(self, reduced: IpInstance, keep: np.ndarray) -> None:
        """Continue on a reduced instance, keeping the iterates of the surviving variables"""
        self.state = self.state.restrict(keep)
        self.trace.retain(keep)
        self.inst = reduced
        return

    def report_cg(self) -> None:
        if self.state.cg_warnings:
            logger.warning("CG missed tolerance %g in %d of %d iterations; last CG iterates were used",
                           self.params.cg_tol, self.state.cg_warnings, self.state.iter)
        return


def solve(inst: IpInstance, params: AdmmParams, observer: Optional[Observer] = None,
          beta: int = 100) -> Solution:
    """
    Plain l2-box ADMM until convergence or T iterations, then round at 0.5

    Args:
        inst: instance to solve
        params: solver parameters (seeded initialisation)
        observer: optional per-iteration callback receiving (t, x)
        beta: trace buffer capacity kept on the returned Solution
    """
    start = perf_counter()
    session = LpBoxAdmm(inst, params, beta, observer)
    while session.state.iter < params.T:
        if session.step():
            break
    x_binary = binarize(session.state.x)
    wall_time = perf_counter() - start
    session.report_cg()
    logger.debug("plain ADMM: %d iterations, converged=%s, residual=%.3g",
                 session.state.iter, session.is_converged, session.state.primal_residual())
    return Solution(x_binary, inst.objective(x_binary), session.state.iter, wall_time,
                    session.is_converged, session.trace, session.state.cg_warnings, session.residuals)

"""Exact shrinking of an instance once some variables are fixed, and lifting back"""
import logging
from enum import IntEnum
from typing import List, Mapping, Tuple
import numpy as np
from scipy import sparse
from errors import FixingContractError, ValidationError
from instances import ConstraintBlock, IpInstance

logger = logging.getLogger(__name__)


class VarStatus(IntEnum):
    FREE = -1
    FIXED0 = 0
    FIXED1 = 1


class FixMask:
    """
    Status of every original variable plus the bookkeeping of the fixing rounds

    Attributes:
        status: int8 array over VarStatus, length n (original indexing)
        constant: objective contribution accumulated from the fixed variables
        round: number of fixing steps applied so far
        last_fixed: variables fixed by the latest step
    """
    def __init__(self, status, constant: float = 0.0, round: int = 0, last_fixed: int = 0):
        self.status = np.asarray(status, dtype=np.int8)
        self.constant = float(constant)
        self.round = int(round)
        self.last_fixed = int(last_fixed)
        return

    @classmethod
    def all_free(cls, n: int) -> "FixMask":
        return cls(np.full(n, VarStatus.FREE, dtype=np.int8))

    @property
    def n(self) -> int:
        return self.status.shape[0]

    @property
    def reduced_to_original(self) -> np.ndarray:
        return np.flatnonzero(self.status == VarStatus.FREE)

    @property
    def u(self) -> int:
        return int(np.count_nonzero(self.status == VarStatus.FREE))

    @property
    def v(self) -> int:
        return self.last_fixed

    @property
    def total_fixed(self) -> int:
        return self.n - self.u

    def to_list(self) -> List[str]:
        return [VarStatus(s).name for s in self.status]

    @classmethod
    def from_list(cls, names: List[str], constant: float = 0.0, round: int = 0) -> "FixMask":
        return cls([VarStatus[name] for name in names], constant, round)


def linear_update(A: sparse.csr_matrix, free: np.ndarray, fixed: np.ndarray, x2: np.ndarray,
                  symmetric: bool = False) -> np.ndarray:
    """
    Linear term picked up by the free variables from the quadratic couplings

    General form (A2 + A3') x2; for symmetric A the shortcut 2 A2 x2.
    """
    A2 = A[free][:, fixed]
    if symmetric:
        return 2.0 * (A2 @ x2)
    A3 = A[fixed][:, free]
    return A2 @ x2 + A3.T @ x2


def apply_fixing(inst: IpInstance, mask: FixMask,
                 fixes: Mapping[int, int]) -> Tuple[IpInstance, FixMask]:
    """
    Substitute fixed values into the instance

    Args:
        inst: the current instance over the free variables of `mask`
        mask: current fixing state
        fixes: original variable index -> value in {0, 1}; every index must be free

    Returns:
        The reduced instance over the still free variables (offset carries the
        eliminated terms) and the updated mask.
    """
    if mask.u != inst.n:
        raise ValidationError(f"mask has {mask.u} free variables, instance has {inst.n}")
    local = np.full(mask.n, -1, dtype=np.int64)
    local[mask.reduced_to_original] = np.arange(inst.n)
    status = mask.status.copy()
    fixed_local = []
    fixed_values = []
    for index, value in sorted(fixes.items()):
        if not 0 <= index < mask.n or status[index] != VarStatus.FREE:
            raise FixingContractError(f"variable {index} is not free")
        if value not in (0, 1):
            raise FixingContractError(f"variable {index} fixed to {value!r}, expected 0 or 1")
        status[index] = VarStatus.FIXED1 if value else VarStatus.FIXED0
        fixed_local.append(local[index])
        fixed_values.append(float(value))
    fixed = np.asarray(fixed_local, dtype=np.int64)
    x2 = np.asarray(fixed_values, dtype=np.float64)
    keep = np.ones(inst.n, dtype=bool)
    keep[fixed] = False
    free = np.flatnonzero(keep)

    b = inst.b[free].copy()
    delta = float(inst.b[fixed] @ x2)
    A = None
    if inst.A is not None:
        A = inst.A[free][:, free]
        if fixed.size:
            b += linear_update(inst.A, free, fixed, x2, inst.symmetric)
            delta += float(x2 @ (inst.A[fixed][:, fixed] @ x2))
    constraints = None
    if inst.constraints is not None:
        block = inst.constraints
        d = block.d - block.C[:, fixed] @ x2 if fixed.size else block.d.copy()
        constraints = ConstraintBlock(block.C[:, free], d, block.relation)
    reduced = IpInstance(free.shape[0], b, inst.sense, A=A, constraints=constraints,
                         offset=inst.offset + delta, symmetric=inst.symmetric)
    updated = FixMask(status, mask.constant + delta, mask.round + 1, fixed.shape[0])
    logger.debug("fixing round %d: fixed %d, %d free, offset %+.6g",
                 updated.round, fixed.shape[0], reduced.n, reduced.offset)
    return reduced, updated


def lift_solution(x_reduced, mask: FixMask) -> np.ndarray:
    """Scatter reduced values back to original indexing; fixed positions take their fixed value"""
    x_reduced = np.asarray(x_reduced)
    if x_reduced.shape[0] != mask.u:
        raise ValidationError(f"expected {mask.u} reduced values, got {x_reduced.shape[0]}")
    lifted = (mask.status == VarStatus.FIXED1).astype(np.int8)
    lifted[mask.reduced_to_original] = x_reduced
    return lifted

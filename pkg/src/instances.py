"""Binary integer programs: data model, generators, file format and exact oracle"""
import logging
from enum import Enum
from json import dump, load
from pathlib import Path
from typing import Any, Dict, Optional, Union
import numpy as np
from scipy import sparse
from errors import InstanceFormatError, SizeGuardError, ValidationError

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_N = 24
FEASIBILITY_TOL = 1e-9


class Sense(str, Enum):
    MAXIMIZE = "max"
    MINIMIZE = "min"


class Relation(str, Enum):
    LE = "le"
    GE = "ge"
    EQ = "eq"


def _as_csr(matrix, shape) -> sparse.csr_matrix:
    csr = sparse.csr_matrix(matrix, shape=shape, dtype=np.float64)
    csr.sum_duplicates()
    csr.sort_indices()
    return csr


def _sparse_equal(a: Optional[sparse.spmatrix], b: Optional[sparse.spmatrix]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and (a != b).nnz == 0


class ConstraintBlock:
    """
    Linear constraints C x (relation) d applied row-wise with one relation

    Attributes:
        C: sparse m x n matrix
        d: right-hand side, length m
        relation: LE, GE or EQ for every row
    """
    def __init__(self, C, d, relation: Union[Relation, str] = Relation.LE, n: Optional[int] = None):
        d = np.asarray(d, dtype=np.float64).reshape(-1)
        shape = (d.shape[0], n if n is not None else C.shape[1])
        if C.shape != shape:
            raise InstanceFormatError("constraints.C", f"expected shape {shape}, got {C.shape}")
        self.C = _as_csr(C, shape)
        self.d = d
        self.relation = Relation(relation)
        return

    @property
    def m(self) -> int:
        return self.d.shape[0]

    def violated_rows(self, Cx: np.ndarray) -> np.ndarray:
        """Boolean mask of rows whose left-hand side value Cx breaks the relation"""
        if self.relation is Relation.LE:
            return Cx > self.d + FEASIBILITY_TOL
        if self.relation is Relation.GE:
            return Cx < self.d - FEASIBILITY_TOL
        return np.abs(Cx - self.d) > FEASIBILITY_TOL

    def project(self, v: np.ndarray) -> np.ndarray:
        """Per-coordinate projection of v onto {y (relation) d}"""
        if self.relation is Relation.LE:
            return np.minimum(v, self.d)
        if self.relation is Relation.GE:
            return np.maximum(v, self.d)
        return self.d.copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConstraintBlock):
            return NotImplemented
        return (self.relation is other.relation
                and np.array_equal(self.d, other.d)
                and _sparse_equal(self.C, other.C))


class IpInstance:
    """
    One binary program: optimise x'Ax + b'x + offset over x in {0,1}^n subject to constraints

    Objectives are always reported in these natural units; the sense only says
    which direction is better. An instance with n = 0 only arises after every
    variable has been fixed.
    """
    def __init__(self,
                 n: int,
                 b,
                 sense: Union[Sense, str] = Sense.MAXIMIZE,
                 A=None,
                 constraints: Optional[ConstraintBlock] = None,
                 offset: float = 0.0,
                 symmetric: bool = False):
        if n < 0:
            raise InstanceFormatError("n", f"must be non-negative, got {n}")
        self.n = int(n)
        self.sense = Sense(sense)
        self.b = np.asarray(b, dtype=np.float64).reshape(-1)
        if self.b.shape[0] != self.n:
            raise InstanceFormatError("b", f"expected {self.n} entries, got {self.b.shape[0]}")
        self.A = None if A is None else _as_csr(A, A.shape)
        if self.A is not None and self.A.shape != (self.n, self.n):
            raise InstanceFormatError("A", f"expected shape {(self.n, self.n)}, got {self.A.shape}")
        self.symmetric = bool(symmetric)
        if self.symmetric and self.A is not None and (self.A != self.A.T).nnz:
            raise InstanceFormatError("A.symmetric", "flag set but A differs from its transpose")
        if constraints is not None and constraints.C.shape[1] != self.n:
            raise InstanceFormatError("constraints.C", f"expected {self.n} columns, got {constraints.C.shape[1]}")
        self.constraints = constraints
        self.offset = float(offset)
        return

    @property
    def sign(self) -> float:
        """Factor turning the objective into one to minimise"""
        return -1.0 if self.sense is Sense.MAXIMIZE else 1.0

    @property
    def is_quadratic(self) -> bool:
        return self.A is not None and self.A.nnz > 0

    @property
    def m(self) -> int:
        return 0 if self.constraints is None else self.constraints.m

    def objective(self, x) -> float:
        """x'Ax + b'x + offset"""
        x = np.asarray(x, dtype=np.float64)
        value = float(self.b @ x)
        if self.A is not None:
            value += float(x @ (self.A @ x))
        return value + self.offset

    def constraint_violations(self, x) -> int:
        """Number of constraint rows violated by x"""
        if self.constraints is None:
            return 0
        Cx = self.constraints.C @ np.asarray(x, dtype=np.float64)
        return int(np.count_nonzero(self.constraints.violated_rows(Cx)))

    def is_feasible(self, x) -> bool:
        return self.constraint_violations(x) == 0

    def better(self, a: float, b: float) -> bool:
        """True when objective value a strictly beats b under this sense"""
        return a > b if self.sense is Sense.MAXIMIZE else a < b

    def __eq__(self, other) -> bool:
        if not isinstance(other, IpInstance):
            return NotImplemented
        return (self.n == other.n
                and self.sense is other.sense
                and self.offset == other.offset
                and self.symmetric == other.symmetric
                and np.array_equal(self.b, other.b)
                and _sparse_equal(self.A, other.A)
                and self.constraints == other.constraints)

    def __repr__(self) -> str:
        kind = "quadratic" if self.is_quadratic else "linear"
        return f"IpInstance(n={self.n}, m={self.m}, sense={self.sense.value}, {kind}, offset={self.offset:g})"


class GeneratorConfig:
    """
    Parameters of the combinatorial auction generator

    Args:
        n: number of bids (= binary variables)
        items: number of items; the constraint count is proportional to it
        xi: proportionality constant between items and constraints
        density: expected fraction of the items contained in one bid
        price_scale: price per item of a bid before the random premium
        seed: PRNG seed
    """
    def __init__(self, n: int = 500, items: int = 100, xi: float = 1.0,
                 density: float = 0.05, price_scale: float = 1.0, seed: int = 0):
        if n < 1:
            raise ValidationError(f"n must be >= 1, got {n}")
        if items < 1:
            raise ValidationError(f"items must be >= 1, got {items}")
        if not 0.0 < density <= 1.0:
            raise ValidationError(f"density must lie in (0, 1], got {density}")
        if price_scale <= 0.0:
            raise ValidationError(f"price_scale must be positive, got {price_scale}")
        self.n = int(n)
        self.items = int(items)
        self.xi = float(xi)
        self.density = float(density)
        self.price_scale = float(price_scale)
        self.seed = int(seed)
        return

    @property
    def expected_constraints(self) -> float:
        return self.items / self.xi

    @classmethod
    def from_settings(cls, settings, **overrides) -> "GeneratorConfig":
        values = settings.category("generator")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(n=values["n"], items=values["items"], xi=values["xi"], density=values["density"],
                   price_scale=values["price_scale"], seed=values.get("seed", 0))

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "items": self.items, "xi": self.xi, "density": self.density,
                "price_scale": self.price_scale, "seed": self.seed}


def generate_auction(cfg: GeneratorConfig) -> IpInstance:
    """
    Random set-packing auction: maximize b'x s.t. Cx <= 1

    Every bid picks a random bundle of items (binomial size, at least one item) and is
    priced proportionally to its size with a uniform premium of up to 50%. Only items
    contained in some bid get a constraint row.
    """
    rng = np.random.default_rng(cfg.seed)
    bundles = []
    prices = np.empty(cfg.n)
    for bid in range(cfg.n):
        size = max(1, int(rng.binomial(cfg.items, cfg.density)))
        bundles.append(np.sort(rng.choice(cfg.items, size=size, replace=False)))
        prices[bid] = cfg.price_scale * size * (1.0 + rng.uniform(0.0, 0.5))
    cols = np.concatenate([np.full(len(bundle), bid) for bid, bundle in enumerate(bundles)])
    item_ids = np.concatenate(bundles)
    referenced, rows = np.unique(item_ids, return_inverse=True)
    C = sparse.csr_matrix((np.ones(len(item_ids)), (rows, cols)), shape=(len(referenced), cfg.n))
    constraints = ConstraintBlock(C, np.ones(len(referenced)), Relation.LE)
    logger.debug("auction seed=%d: n=%d, m=%d, nnz=%d", cfg.seed, cfg.n, constraints.m, C.nnz)
    return IpInstance(cfg.n, prices, Sense.MAXIMIZE, constraints=constraints)


def grid_laplacian(width: int, height: int) -> sparse.csr_matrix:
    """Un-normalised Laplacian D - W of the 4-neighbour width x height grid"""
    index = np.arange(width * height).reshape(height, width)
    right = np.stack([index[:, :-1].ravel(), index[:, 1:].ravel()])
    down = np.stack([index[:-1, :].ravel(), index[1:, :].ravel()])
    edges = np.concatenate([right, down], axis=1)
    n = width * height
    W = sparse.coo_matrix((np.ones(edges.shape[1]), (edges[0], edges[1])), shape=(n, n))
    W = (W + W.T).tocsr()
    D = sparse.diags(np.asarray(W.sum(axis=1)).ravel())
    return (D - W).tocsr()


def generate_grid_mrf(width: int, height: int, unary_strength: float = 1.0, coupling: float = 0.5,
                      seed: int = 0, noise: float = 0.8) -> IpInstance:
    """
    Binary-label grid MRF energy: minimize x'Ax + b'x with A = coupling * Laplacian

    The unary term comes from a two-region picture (a centred disc labelled 1 on a
    background labelled 0) corrupted with Gaussian noise; b_i < 0 favours label 1.

    Args:
        width, height: grid size, n = width * height
        unary_strength: scale of the unary potentials
        coupling: weight of every grid edge (smoothness)
        seed: PRNG seed for the noise
        noise: standard deviation of the Gaussian noise
    """
    if width < 1 or height < 1:
        raise ValidationError(f"grid size must be positive, got {width}x{height}")
    if coupling < 0:
        raise ValidationError(f"coupling must be non-negative, got {coupling}")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width]
    radius = min(width, height) / 3.0
    inside = (rows - (height - 1) / 2.0) ** 2 + (cols - (width - 1) / 2.0) ** 2 <= radius ** 2
    signal = np.where(inside, 1.0, -1.0).ravel()
    b = unary_strength * (-signal + noise * rng.standard_normal(width * height))
    A = coupling * grid_laplacian(width, height)
    A.eliminate_zeros()
    return IpInstance(width * height, b, Sense.MINIMIZE, A=A, symmetric=True)


class OracleResult:
    """Outcome of exhaustive enumeration; x and objective are None when infeasible"""
    def __init__(self, x: Optional[np.ndarray], objective: Optional[float]):
        self.x = x
        self.objective = objective
        return

    @property
    def feasible(self) -> bool:
        return self.x is not None


def brute_force_solve(inst: IpInstance, chunk: int = 1 << 16) -> OracleResult:
    """
    Exact optimum by enumerating all 2^n binary vectors

    Vectors are visited in lexicographic order (x[0] most significant), so among
    equal objectives the lexicographically smallest vector wins.
    """
    if inst.n > BRUTE_FORCE_MAX_N:
        raise SizeGuardError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got n={inst.n}")
    shifts = np.arange(inst.n - 1, -1, -1, dtype=np.int64)
    best_x, best_value = None, None
    for start in range(0, 1 << inst.n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << inst.n), dtype=np.int64)
        X = ((codes[:, None] >> shifts) & 1).astype(np.float64)
        values = X @ inst.b
        if inst.A is not None:
            values += np.einsum("ij,ij->i", X, (inst.A @ X.T).T)
        if inst.constraints is not None:
            violated = inst.constraints.violated_rows((inst.constraints.C @ X.T).T)
            values = np.where(violated.any(axis=1), np.nan, values)
        if np.all(np.isnan(values)):
            continue
        pick = np.nanargmax(values) if inst.sense is Sense.MAXIMIZE else np.nanargmin(values)
        if best_value is None or inst.better(values[pick], best_value):
            best_x, best_value = X[pick].astype(np.int8), float(values[pick])
    if best_x is None:
        return OracleResult(None, None)
    return OracleResult(best_x, best_value + inst.offset)


def greedy_dual_bound(inst: IpInstance) -> float:
    """
    Upper bound on the LP relaxation of a packing instance (maximize, Cx <= d, C, d >= 0)

    Every row is priced at the best per-row price b_j / sum_i C_ij of the columns
    touching it, which makes the prices dual feasible; columns without rows are
    unbounded by the constraints and contribute their positive price directly.
    """
    if inst.sense is not Sense.MAXIMIZE or inst.is_quadratic:
        raise ValidationError("greedy dual bound needs a linear maximisation")
    gains = np.clip(inst.b, 0.0, None)
    if inst.constraints is None:
        return float(gains.sum()) + inst.offset
    block = inst.constraints
    if block.relation is not Relation.LE or block.C.min() < 0 or np.any(block.d < 0):
        raise ValidationError("greedy dual bound needs a packing block Cx <= d with C, d >= 0")
    column_weight = np.asarray(block.C.sum(axis=0)).ravel()
    touched = column_weight > 0
    ratio = np.zeros(inst.n)
    ratio[touched] = gains[touched] / column_weight[touched]
    pattern = (block.C > 0).astype(np.float64)
    row_price = np.asarray(pattern.multiply(ratio[None, :]).max(axis=1).todense()).ravel()
    return float(block.d @ row_price + gains[~touched].sum()) + inst.offset


def _triplets(matrix: sparse.spmatrix) -> list:
    coo = _as_csr(matrix, matrix.shape).tocoo()
    return [[int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data)]


def instance_to_dict(inst: IpInstance) -> Dict[str, Any]:
    data = {
        "n": inst.n,
        "sense": inst.sense.value,
        "offset": inst.offset,
        "b": [float(v) for v in inst.b],
        "A": None,
        "constraints": None
    }
    if inst.A is not None:
        data["A"] = {"triplets": _triplets(inst.A), "symmetric": inst.symmetric}
    if inst.constraints is not None:
        block = inst.constraints
        data["constraints"] = {
            "m": block.m,
            "relation": block.relation.value,
            "C": _triplets(block.C),
            "d": [float(v) for v in block.d]
        }
    return data


def _parse_triplets(raw, shape, field: str) -> sparse.csr_matrix:
    try:
        entries = np.asarray(raw, dtype=np.float64).reshape(-1, 3)
    except (TypeError, ValueError) as e:
        raise InstanceFormatError(field, f"expected [[i, j, v], ...]: {e}")
    rows, cols = entries[:, 0], entries[:, 1]
    if np.any(entries[:, :2] != np.floor(entries[:, :2])):
        raise InstanceFormatError(field, "coordinates must be integers")
    if entries.size and (np.any(rows < 0) or np.any(rows >= shape[0]) or np.any(cols < 0) or np.any(cols >= shape[1])):
        raise InstanceFormatError(field, f"coordinate outside shape {shape}")
    return _as_csr(sparse.coo_matrix((entries[:, 2], (rows.astype(np.int64), cols.astype(np.int64))), shape=shape), shape)


def _numeric(values: list, field: str) -> np.ndarray:
    try:
        return np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InstanceFormatError(field, f"non-numeric entry: {e}")


def _field(data: Dict[str, Any], key: str, field: str):
    if key not in data:
        raise InstanceFormatError(field, "missing")
    return data[key]


def instance_from_dict(data: Dict[str, Any]) -> IpInstance:
    n = _field(data, "n", "n")
    if not isinstance(n, int) or n < 1:
        raise InstanceFormatError("n", f"must be a positive integer, got {n!r}")
    sense = _field(data, "sense", "sense")
    if sense not in ("max", "min"):
        raise InstanceFormatError("sense", f"must be 'max' or 'min', got {sense!r}")
    b = _field(data, "b", "b")
    if not isinstance(b, list) or len(b) != n:
        raise InstanceFormatError("b", f"expected {n} entries")
    b = _numeric(b, "b")
    A = None
    symmetric = False
    if data.get("A") is not None:
        A = _parse_triplets(_field(data["A"], "triplets", "A.triplets"), (n, n), "A.triplets")
        symmetric = bool(data["A"].get("symmetric", False))
    constraints = None
    if data.get("constraints") is not None:
        raw = data["constraints"]
        m = _field(raw, "m", "constraints.m")
        if not isinstance(m, int) or m < 0:
            raise InstanceFormatError("constraints.m", f"must be a non-negative integer, got {m!r}")
        relation = _field(raw, "relation", "constraints.relation")
        if relation not in ("le", "ge", "eq"):
            raise InstanceFormatError("constraints.relation", f"unknown relation {relation!r}")
        d = _field(raw, "d", "constraints.d")
        if not isinstance(d, list) or len(d) != m:
            raise InstanceFormatError("constraints.d", f"expected {m} entries")
        d = _numeric(d, "constraints.d")
        C = _parse_triplets(_field(raw, "C", "constraints.C"), (m, n), "constraints.C")
        constraints = ConstraintBlock(C, d, relation)
    offset = data.get("offset", 0.0)
    if isinstance(offset, bool) or not isinstance(offset, (int, float)):
        raise InstanceFormatError("offset", f"must be a number, got {offset!r}")
    return IpInstance(n, b, sense, A=A, constraints=constraints, offset=float(offset), symmetric=symmetric)


def write_instance(inst: IpInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        dump(instance_to_dict(inst), f)
    return


def read_instance(path) -> IpInstance:
    with open(Path(path), "r", encoding="utf-8") as f:
        try:
            data = load(f)
        except ValueError as e:
            raise InstanceFormatError("<file>", f"not valid JSON: {e}")
    if not isinstance(data, dict):
        raise InstanceFormatError("<file>", "top level must be an object")
    return instance_from_dict(data)

"""Behaviour cloning of the fixing policy from plain ADMM runs"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple
import numpy as np
import torch
from tqdm import tqdm
from errors import DatasetFormatError, TrainingDivergedError, ValidationError
from instances import IpInstance
from lpbox_admm import AdmmParams, solve
from policy import FixingPolicy, PolicyConfig

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7
HEADER_DTYPE = np.dtype("<u4")


def record_dtype(beta: int) -> np.dtype:
    """One packed dataset record: trace, label, weight, (instance, round, variable)"""
    return np.dtype([("trace", "<f4", (beta,)), ("label", "u1"), ("weight", "<f4"), ("provenance", "<u4", (3,))])


class Sample(NamedTuple):
    trace: np.ndarray
    label: int
    weight: float
    provenance: Tuple[int, int, int]


class Dataset:
    """Expert state-action pairs stored column-wise"""
    def __init__(self, traces, labels, weights, provenance, beta: int):
        self.beta = int(beta)
        self.traces = np.asarray(traces, dtype=np.float32).reshape(-1, self.beta)
        self.labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
        self.weights = np.asarray(weights, dtype=np.float32).reshape(-1)
        self.provenance = np.asarray(provenance, dtype=np.uint32).reshape(-1, 3)
        sizes = {len(self.traces), len(self.labels), len(self.weights), len(self.provenance)}
        if len(sizes) != 1:
            raise DatasetFormatError(f"inconsistent column lengths {sorted(sizes)}")
        return

    @classmethod
    def empty(cls, beta: int) -> "Dataset":
        return cls(np.zeros((0, beta)), [], [], np.zeros((0, 3)), beta)

    @classmethod
    def concatenate(cls, parts: Sequence["Dataset"], beta: int) -> "Dataset":
        if not parts:
            return cls.empty(beta)
        return cls(np.concatenate([p.traces for p in parts]), np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.weights for p in parts]), np.concatenate([p.provenance for p in parts]), beta)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> Sample:
        e, r, i = (int(v) for v in self.provenance[index])
        return Sample(self.traces[index], int(self.labels[index]), float(self.weights[index]), (e, r, i))

    def save(self, path) -> None:
        records = np.empty(len(self), dtype=record_dtype(self.beta))
        records["trace"] = self.traces
        records["label"] = self.labels
        records["weight"] = self.weights
        records["provenance"] = self.provenance
        with open(path, "wb") as f:
            f.write(np.array([len(self), self.beta], dtype=HEADER_DTYPE).tobytes())
            f.write(records.tobytes())
        return

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < 2 * HEADER_DTYPE.itemsize:
            raise DatasetFormatError(f"{path}: missing header")
        count, beta = (int(v) for v in np.frombuffer(raw, dtype=HEADER_DTYPE, count=2))
        dtype = record_dtype(beta)
        if len(raw) != 2 * HEADER_DTYPE.itemsize + count * dtype.itemsize:
            raise DatasetFormatError(f"{path}: expected {count} records of {dtype.itemsize} bytes")
        records = np.frombuffer(raw, dtype=dtype, count=count, offset=2 * HEADER_DTYPE.itemsize)
        return cls(records["trace"], records["label"], records["weight"], records["provenance"], beta)


class TrainConfig:
    """
    Behaviour cloning hyperparameters

    Args:
        epochs: passes over the dataset
        learning_rate: Adam step size
        batch_size: samples per mini-batch
        adam_beta1, adam_beta2, adam_eps: Adam moment parameters
        gamma: rounds of beta iterations harvested per expert run
        weighted_loss: weight samples by 1/(r+1); False trains with unit weights
        seed: shuffling seed
    """
    FIELDS = ("epochs", "learning_rate", "batch_size", "adam_beta1", "adam_beta2", "adam_eps",
              "gamma", "weighted_loss", "seed")

    def __init__(self, epochs: int = 10, learning_rate: float = 1e-4, batch_size: int = 256,
                 adam_beta1: float = 0.9, adam_beta2: float = 0.999, adam_eps: float = 1e-8,
                 gamma: int = 10, weighted_loss: bool = True, seed: int = 0):
        if epochs < 0:
            raise ValidationError(f"epochs must be non-negative, got {epochs}")
        if learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {learning_rate}")
        if batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {batch_size}")
        if gamma < 0:
            raise ValidationError(f"gamma must be non-negative, got {gamma}")
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.adam_beta1 = float(adam_beta1)
        self.adam_beta2 = float(adam_beta2)
        self.adam_eps = float(adam_eps)
        self.gamma = int(gamma)
        self.weighted_loss = bool(weighted_loss)
        self.seed = int(seed)
        return

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_settings(cls, settings, mrf: bool = False, **overrides) -> "TrainConfig":
        values = settings.category("training", "training_mrf" if mrf else None)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**{k: v for k, v in values.items() if k in cls.FIELDS})


def sample_weight(r: int) -> float:
    if r < 0:
        raise ValidationError(f"round must be non-negative, got {r}")
    return 1.0 / (r + 1)


def _expert_samples(e: int, inst: IpInstance, params: AdmmParams, beta: int, gamma: int) -> Dataset:
    horizon = gamma * beta
    history = np.empty((horizon, inst.n))

    def record(t: int, x: np.ndarray) -> None:
        if t <= horizon:
            history[t - 1] = x
        return

    solution = solve(inst, params, observer=record, beta=beta)
    rounds = min(gamma, solution.iterations // beta)
    if rounds < gamma:
        logger.info("instance %d stopped after %d iterations: %d of %d rounds harvested",
                    e, solution.iterations, rounds, gamma)
    parts = []
    variables = np.arange(inst.n)
    for r in range(rounds):
        block = history[r * beta:(r + 1) * beta].T
        provenance = np.stack([np.full(inst.n, e), np.full(inst.n, r), variables], axis=1)
        parts.append(Dataset(block, solution.x_binary, np.full(inst.n, sample_weight(r)), provenance, beta))
    return Dataset.concatenate(parts, beta)


def collect_dataset(instances: Sequence[IpInstance], admm_params: AdmmParams, beta: int, gamma: int,
                    threads: int = 1, progress: bool = False) -> Dataset:
    """
    Run the plain solver on every instance and harvest gamma blocks of beta iterates per variable

    Sample (e, r, i) holds the iterates of variable i of instance e over iterations
    [r*beta, (r+1)*beta), labelled with the expert's rounded final value and weighted 1/(r+1).
    """
    if gamma * beta > admm_params.T:
        raise ValidationError(f"gamma * beta = {gamma * beta} exceeds the iteration budget T = {admm_params.T}")
    if gamma == 0:
        return Dataset.empty(beta)
    jobs = list(enumerate(instances))
    bar = tqdm(total=len(jobs), desc="expert runs", disable=not progress)
    parts = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for part in pool.map(lambda job: _expert_samples(job[0], job[1], admm_params, beta, gamma), jobs):
            parts.append(part)
            bar.update()
    bar.close()
    dataset = Dataset.concatenate(parts, beta)
    logger.info("collected %d samples from %d instances", len(dataset), len(jobs))
    return dataset


def wbce_loss(p, a_star, w) -> torch.Tensor:
    """Negative mean of w * (a log p + (1 - a) log(1 - p)) with p clamped away from 0 and 1"""
    p = torch.as_tensor(p)
    a_star = torch.as_tensor(a_star, dtype=p.dtype)
    w = torch.as_tensor(w, dtype=p.dtype)
    p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    q = a_star * torch.log(p) + (1.0 - a_star) * torch.log1p(-p)
    return -(w * q).mean()


def train(dataset: Dataset, cfg: TrainConfig, policy_cfg: PolicyConfig,
          progress: bool = False) -> Tuple[FixingPolicy, List[float]]:
    """
    Minimise the weighted BCE with Adam over seeded shuffled mini-batches

    Returns:
        The network in inference mode and the mean training loss of every epoch.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if dataset.beta != policy_cfg.beta:
        raise ValidationError(f"dataset traces have length {dataset.beta}, policy expects {policy_cfg.beta}")
    model = FixingPolicy(policy_cfg)
    losses: List[float] = []
    if cfg.epochs == 0:
        return model.eval(), losses
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    generator = torch.Generator().manual_seed(cfg.seed)
    traces = torch.from_numpy(np.ascontiguousarray(dataset.traces))
    labels = torch.from_numpy(dataset.labels.astype(np.float64))
    weights = torch.from_numpy(dataset.weights.astype(np.float64))
    if not cfg.weighted_loss:
        weights = torch.ones_like(weights)
    model.train()
    for epoch in tqdm(range(cfg.epochs), desc="training", disable=not progress):
        order = torch.randperm(len(dataset), generator=generator)
        total = 0.0
        seen = 0
        for batch, start in enumerate(range(0, len(dataset), cfg.batch_size)):
            index = order[start:start + cfg.batch_size]
            if len(index) * policy_cfg.alpha < 2:
                continue
            loss = wbce_loss(model(traces[index]), labels[index], weights[index])
            if torch.isnan(loss):
                raise TrainingDivergedError(epoch, batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(index)
            seen += len(index)
        losses.append(total / max(seen, 1))
        logger.info("epoch %d/%d: loss %.6f", epoch + 1, cfg.epochs, losses[-1])
    return model.eval(), losses

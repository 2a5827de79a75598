"""Benchmark plants, perturbed-plant datasets, and plant/gain file I/O."""
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionMismatch, NoStabilizingSolution, ParseError, SingularSystem,
                     TooManyRejections)
from .objective import Plant, lqr_gain
from .sparsity import BlockPartition

__all__ = [
    "AGENT_A",
    "AGENT_B1",
    "gen_multiagent",
    "DatasetSpec",
    "LabeledExample",
    "gen_dataset",
    "example_rng",
    "plant_to_dict",
    "plant_from_dict",
    "save_plant",
    "load_plant",
    "gain_to_dict",
    "save_json",
    "load_json",
    "file_sha256",
    "dataset_to_dict",
    "dataset_from_dict",
]

AGENT_A = np.array([[-6.0, 0.0, -3.0],
                    [3.0, -6.0, 0.0],
                    [0.0, 3.0, -6.0]])
AGENT_B1 = np.array([[3.0, 0.0],
                     [0.0, 3.0],
                     [0.0, 0.0]])


def gen_multiagent(N):
    """N coupled three-state agents, two inputs each.

    Agent ``i`` follows ``dx_i = A_ii x_i - 1/2 sum_j (i - j)(x_i - x_j)
    + B1_ii u_i + 3 w_i``; Q and R are identities.
    """
    N = int(N)
    if N < 1:
        raise ValueError("need at least one agent")
    n, m = 3 * N, 2 * N
    A = np.zeros((n, n))
    B1 = np.zeros((n, m))
    for i in range(N):
        ri = slice(3 * i, 3 * i + 3)
        # agents are numbered from 1 in the coupling law; only differences matter
        coupling = sum(i - j for j in range(N) if j != i)
        A[ri, ri] = AGENT_A - 0.5 * coupling * np.eye(3)
        for j in range(N):
            if j != i:
                A[ri, 3 * j:3 * j + 3] = 0.5 * (i - j) * np.eye(3)
        B1[ri, 2 * i:2 * i + 2] = AGENT_B1
    return Plant(A=A, B1=B1, B2=3.0 * np.eye(n), Q=np.eye(n), R=np.eye(m),
                 partition=BlockPartition.uniform(N, 2, 3), name=f"multiagent-N{N}")


# -- datasets -------------------------------------------------------------------

@dataclass
class DatasetSpec:
    base: Plant
    count: int
    noise_sigma: float = 1.0
    seed: int = 0
    perturb_targets: str = "A"  # "A" or "A,B1,B2"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.perturb_targets not in ("A", "A,B1,B2"):
            raise ValueError("perturb_targets must be 'A' or 'A,B1,B2'")


@dataclass(eq=False)
class LabeledExample:
    plant: Plant
    K0: np.ndarray
    K_star: np.ndarray
    iterations: int = 0
    draws: int = 1
    meta: dict = field(default_factory=dict)


def example_rng(seed, index):
    """Independent PCG64 stream for example ``index``.

    Streams come from ``SeedSequence(seed, spawn_key=(index,))`` so example
    ``i`` is reproducible on its own, independent of how many examples are
    generated or in which order.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _perturb(base, rng, sigma, targets):
    def noisy(M):
        mask = M != 0
        return M + np.where(mask, sigma * rng.standard_normal(M.shape), 0.0)

    changes = {"A": noisy(base.A)}
    if targets == "A,B1,B2":
        changes["B1"] = noisy(base.B1)
        changes["B2"] = noisy(base.B2)
    return base.with_matrices(**changes)


def _make_example(args):
    from .solvers import Status, ista_solve

    spec, config, index, max_draws = args
    rng = example_rng(spec.seed, index)
    for draw in range(1, max_draws + 1):
        plant = _perturb(spec.base, rng, spec.noise_sigma, spec.perturb_targets)
        try:
            K0 = lqr_gain(plant)
            result = ista_solve(plant, K0, config)
        except (NoStabilizingSolution, SingularSystem, np.linalg.LinAlgError):
            continue
        if result.trace.status is not Status.CONVERGED:
            continue
        return LabeledExample(plant=plant, K0=K0, K_star=result.K, draws=draw,
                              iterations=result.trace.iterations)
    return None


def gen_dataset(spec, reference_config, jobs=1):
    """Perturbed copies of ``spec.base`` labelled with converged ISTA gains.

    Gaussian noise ``N(0, sigma^2)`` is added to the structurally nonzero
    entries of the targeted matrices. A draw whose plant has no stabilizing
    Riccati solution, or whose reference solve does not converge, is
    rejected and redrawn from the same example stream.

    Returns ``(examples, rejections)``.
    """
    max_draws = 10 * spec.count
    tasks = [(spec, reference_config, i, max_draws) for i in range(spec.count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            examples = list(pool.map(_make_example, tasks))
    else:
        examples = [_make_example(t) for t in tasks]
    if any(ex is None for ex in examples):
        raise TooManyRejections("an example exceeded its redraw budget")
    total = sum(ex.draws for ex in examples)
    if total > max_draws:
        raise TooManyRejections(f"{total} draws for {spec.count} examples")
    return examples, total - spec.count


# -- file formats ---------------------------------------------------------------

PLANT_FIELDS = ("A", "B1", "B2", "Q", "R")


def _rows(M):
    return [[float(v) for v in row] for row in np.asarray(M)]


def plant_to_dict(plant):
    return {
        "name": plant.name,
        "n": plant.n,
        "m": plant.m,
        "l": plant.l,
        "gain_shape": [plant.m, plant.n],
        "A": _rows(plant.A),
        "B1": _rows(plant.B1),
        "B2": _rows(plant.B2),
        "Q": _rows(plant.Q),
        "R": _rows(plant.R),
        "partition": plant.partition.to_dict(),
    }


def _as_matrix(d, key, shape):
    if key not in d:
        raise ParseError(f"missing required field {key!r}", field=key)
    try:
        M = np.array(d[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field {key!r} is not a numeric matrix: {exc}", field=key) from None
    if M.ndim != 2:
        raise ParseError(f"field {key!r} must be a nested row-major array", field=key)
    if shape is not None and M.shape != shape:
        raise DimensionMismatch(f"{key} has shape {M.shape}, expected {shape}")
    return M


def plant_from_dict(d):
    if not isinstance(d, dict):
        raise ParseError("plant file must hold a JSON object")
    for key in ("n", "m", "l"):
        if key not in d:
            raise ParseError(f"missing required field {key!r}", field=key)
    try:
        n, m, l = int(d["n"]), int(d["m"]), int(d["l"])
    except (TypeError, ValueError):
        raise ParseError("n, m, l must be integers") from None
    shapes = {"A": (n, n), "B1": (n, m), "B2": (n, l), "Q": (n, n), "R": (m, m)}
    mats = {k: _as_matrix(d, k, shapes[k]) for k in PLANT_FIELDS}
    part = d.get("partition")
    if part is None:
        raise ParseError("missing required field 'partition'", field="partition")
    try:
        partition = BlockPartition(tuple(part["row_sizes"]), tuple(part["col_sizes"]))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad partition: {exc}", field="partition") from None
    return Plant(partition=partition, name=str(d.get("name", "")), **mats)


def save_json(obj, path):
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None


def save_plant(plant, path):
    save_json(plant_to_dict(plant), path)


def load_plant(path):
    """Read a plant file; raises ParseError, DimensionMismatch or InvalidWeights."""
    return plant_from_dict(load_json(path))


def gain_to_dict(K, J, G, gamma_or_radius, algorithm, iterations, converged, **extra):
    d = {
        "K": _rows(K),
        "J": float(J),
        "G": float(G),
        "gamma_or_radius": float(gamma_or_radius),
        "algorithm": algorithm,
        "iterations": int(iterations),
        "converged": bool(converged),
    }
    d.update(extra)
    return d


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()



def dataset_to_dict(spec, examples, rejections=0, reference=None):
    """Serializable form of a labelled dataset.

    Every example stores the perturbed ``A``, ``B1`` and ``B2``; ``Q``, ``R``
    and the partition are shared with the base plant.
    """
    return {
        "count": len(examples),
        "noise_sigma": float(spec.noise_sigma),
        "seed": int(spec.seed),
        "perturb_targets": spec.perturb_targets,
        "rejections": int(rejections),
        "reference": reference or {},
        "base": plant_to_dict(spec.base),
        "examples": [
            {
                "A": _rows(ex.plant.A),
                "B1": _rows(ex.plant.B1),
                "B2": _rows(ex.plant.B2),
                "K0": _rows(ex.K0),
                "K_star": _rows(ex.K_star),
                "iterations": int(ex.iterations),
                "draws": int(ex.draws),
            }
            for ex in examples
        ],
    }


def dataset_from_dict(d):
    """Inverse of :func:`dataset_to_dict`; returns ``(spec, examples)``."""
    if not isinstance(d, dict):
        raise ParseError("dataset file must hold a JSON object")
    for key in ("base", "examples"):
        if key not in d:
            raise ParseError(f"missing required field {key!r}", field=key)
    base = plant_from_dict(d["base"])
    examples = []
    for i, e in enumerate(d["examples"]):
        if not isinstance(e, dict):
            raise ParseError(f"example {i} is not an object", field="examples")
        mats = {k: _as_matrix(e, k, getattr(base, k).shape) for k in ("A", "B1", "B2")}
        examples.append(LabeledExample(
            plant=base.with_matrices(**mats),
            K0=_as_matrix(e, "K0", (base.m, base.n)),
            K_star=_as_matrix(e, "K_star", (base.m, base.n)),
            iterations=int(e.get("iterations", 0)),
            draws=int(e.get("draws", 1)),
        ))
    spec = DatasetSpec(base=base, count=max(len(examples), 1),
                       noise_sigma=float(d.get("noise_sigma", 0.0)), seed=int(d.get("seed", 0)),
                       perturb_targets=d.get("perturb_targets", "A"))
    return spec, examples

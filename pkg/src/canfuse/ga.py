"""Two-parameter genetic search over temporal filter size and feature mask.

A chromosome holds 14 filter bits (decoded big-endian with a floor of
500, spanning [500, 16883]) and a 21-bit feature mask over the canonical
fused columns. Each individual is scored by training a depth-capped
decision tree on the training rows of its masked feature matrix and
taking the F1 score on the validation rows, penalized by feature count:

    fitness = f1 - 0.001 * popcount(mask)

The generational loop preserves the top 20% verbatim, fills the rest
from parents chosen 80% by tournament and 20% uniformly at random, and
applies uniform crossover and per-bit mutation to the offspring. Search
stops at the generation limit or once the best fitness has been
stagnant for two consecutive generations.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fusion import CANONICAL_COLUMNS
from .ml import DtParams, f1_score, train_dt
from .temporal import temporal_features

FILTER_BITS = 14
FILTER_FLOOR = 500
FILTER_CEIL = FILTER_FLOOR + (1 << FILTER_BITS) - 1  # 16883

N_MASK_BITS = len(CANONICAL_COLUMNS)  # 21


@dataclass
class Chromosome:
    filter_bits: np.ndarray
    mask: np.ndarray
    fitness: float | None = None

    def __post_init__(self):
        self.filter_bits = np.asarray(self.filter_bits, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.filter_bits.shape != (FILTER_BITS,):
            raise ConfigError(f"filter_bits must have {FILTER_BITS} bits")
        if self.mask.shape != (N_MASK_BITS,):
            raise ConfigError(f"mask must have {N_MASK_BITS} bits")

    def copy(self) -> "Chromosome":
        return Chromosome(self.filter_bits.copy(), self.mask.copy(), self.fitness)

    def genome(self) -> np.ndarray:
        return np.concatenate([self.filter_bits, self.mask])

    @classmethod
    def from_genome(cls, genome: np.ndarray) -> "Chromosome":
        genome = np.asarray(genome, dtype=bool)
        return cls(genome[:FILTER_BITS], genome[FILTER_BITS:])

    def same_genes(self, other: "Chromosome") -> bool:
        return np.array_equal(self.filter_bits, other.filter_bits) and np.array_equal(
            self.mask, other.mask
        )


@dataclass(frozen=True)
class GaConfig:
    population: int = 25
    generations: int = 5
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    elite_fraction: float = 0.20
    tournament_fraction: float = 0.80
    random_fraction: float = 0.20
    tournament_size: int = 3
    stagnation_generations: int = 2
    seed: int = 7

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate", "elite_fraction",
                     "tournament_fraction", "random_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if abs(self.tournament_fraction + self.random_fraction - 1.0) > 1e-9:
            raise ConfigError("tournament_fraction + random_fraction must equal 1")
        if self.population < 2:
            raise ConfigError("population must be at least 2")
        if self.generations < 1 or self.tournament_size < 1:
            raise ConfigError("generations and tournament_size must be positive")


def decode_filter(filter_bits: np.ndarray) -> int:
    """Big-endian bit value offset by the range floor."""
    bits = np.asarray(filter_bits, dtype=bool)
    if bits.shape != (FILTER_BITS,):
        raise ConfigError(f"expected exactly {FILTER_BITS} filter bits")
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return FILTER_FLOOR + value


def encode_filter(size: int) -> np.ndarray:
    """Inverse of decode_filter, for tests and artifact replay."""
    if not FILTER_FLOOR <= size <= FILTER_CEIL:
        raise ConfigError(f"filter size {size} outside [{FILTER_FLOOR}, {FILTER_CEIL}]")
    value = size - FILTER_FLOOR
    return np.array([(value >> (FILTER_BITS - 1 - i)) & 1 for i in range(FILTER_BITS)], dtype=bool)


def fitness(f1: float, n_selected: int) -> float:
    """Validation F1 penalized by 0.001 per selected feature."""
    return f1 - 0.001 * n_selected


class GaContext:
    """Prepared data the GA scores individuals against.

    Holds the frame ID stream (for temporal features), the normalized
    raw field matrix, the prediction-error features, labels and the
    train/validation row split. Temporal features are cached per filter
    size behind a lock so repeated sizes are free.
    """

    def __init__(
        self,
        ids: np.ndarray,
        raw_fields: np.ndarray,
        pe: np.ndarray,
        labels: np.ndarray,
        train_idx: np.ndarray,
        val_idx: np.ndarray,
        dt_params: DtParams = DtParams(max_depth=12),
        threads: int = 1,
    ):
        self.ids = np.asarray(ids)
        self.raw_fields = np.asarray(raw_fields, dtype=np.float64)
        self.pe = np.asarray(pe, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.train_idx = np.asarray(train_idx)
        self.val_idx = np.asarray(val_idx)
        self.dt_params = dt_params
        self.threads = threads
        n = len(self.ids)
        if not (len(self.raw_fields) == len(self.pe) == len(self.labels) == n):
            raise ConfigError("context inputs disagree on row count")
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def temporal(self, filter_size: int) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            hit = self._cache.get(filter_size)
        if hit is not None:
            return hit
        se, ratio = temporal_features(self.ids, filter_size)
        with self._lock:
            self._cache.setdefault(filter_size, (se, ratio))
        return se, ratio

    def masked_matrix(self, filter_size: int, mask: np.ndarray) -> np.ndarray:
        se, ratio = self.temporal(filter_size)
        sources = [self.raw_fields[:, i] for i in range(11)]
        sources.append(se)
        sources.append(ratio)
        sources.extend(self.pe[:, i] for i in range(8))
        return np.column_stack([sources[i] for i in np.nonzero(mask)[0]])


def evaluate_individual(chromosome: Chromosome, ctx: GaContext) -> float:
    """Score one individual; caches the result on the chromosome."""
    if chromosome.fitness is not None:
        return chromosome.fitness
    n_selected = int(chromosome.mask.sum())
    if n_selected == 0:
        chromosome.fitness = -math.inf
        return chromosome.fitness
    size = decode_filter(chromosome.filter_bits)
    matrix = ctx.masked_matrix(size, chromosome.mask)
    tree = train_dt(matrix[ctx.train_idx], ctx.labels[ctx.train_idx], ctx.dt_params)
    predictions = tree.predict(matrix[ctx.val_idx])
    f1 = f1_score(ctx.labels[ctx.val_idx], predictions)
    chromosome.fitness = fitness(f1, n_selected)
    return chromosome.fitness


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_filter_size: int
    best_popcount: int

    def line(self) -> str:
        return (
            f"gen={self.generation} best={self.best_fitness:.6f} "
            f"mean={self.mean_fitness:.6f} filter={self.best_filter_size} "
            f"features={self.best_popcount}"
        )


def _random_population(config: GaConfig, rng: np.random.Generator) -> list[Chromosome]:
    return [
        Chromosome(rng.random(FILTER_BITS) < 0.5, rng.random(N_MASK_BITS) < 0.5)
        for _ in range(config.population)
    ]


def _tournament(pop, order_rank, config, rng) -> Chromosome:
    picks = rng.integers(0, len(pop), config.tournament_size)
    best = min(picks, key=lambda i: order_rank[i])
    return pop[best]


def _evaluate_all(pop: list[Chromosome], ctx: GaContext) -> None:
    pending = [c for c in pop if c.fitness is None]
    if ctx.threads > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            list(pool.map(lambda c: evaluate_individual(c, ctx), pending))
    else:
        for c in pending:
            evaluate_individual(c, ctx)


def run(
    config: GaConfig,
    ctx: GaContext,
    on_generation=None,
) -> tuple[Chromosome, list[GenerationStats]]:
    """Run the generational loop; returns (best-ever individual, history)."""
    rng = np.random.default_rng(config.seed)
    pop = _random_population(config, rng)
    n_elite = max(1, int(round(config.elite_fraction * config.population)))
    history: list[GenerationStats] = []
    best_ever: Chromosome | None = None
    prev_best = None
    stagnant = 0

    for gen in range(1, config.generations + 1):
        _evaluate_all(pop, ctx)
        order = sorted(range(len(pop)), key=lambda i: (-pop[i].fitness, i))
        order_rank = {i: r for r, i in enumerate(order)}
        best = pop[order[0]]
        finite = [c.fitness for c in pop if math.isfinite(c.fitness)]
        stats = GenerationStats(
            generation=gen,
            best_fitness=best.fitness,
            mean_fitness=float(np.mean(finite)) if finite else -math.inf,
            best_filter_size=decode_filter(best.filter_bits),
            best_popcount=int(best.mask.sum()),
        )
        history.append(stats)
        if on_generation is not None:
            on_generation(stats)
        if best_ever is None or best.fitness > best_ever.fitness:
            best_ever = best.copy()

        if prev_best is not None and best.fitness == prev_best:
            stagnant += 1
        else:
            stagnant = 0
        prev_best = best.fitness
        if stagnant >= config.stagnation_generations or gen == config.generations:
            break

        elites = [pop[i].copy() for i in order[:n_elite]]
        n_children = config.population - n_elite
        n_tournament = int(round(config.tournament_fraction * n_children))
        parents = [_tournament(pop, order_rank, config, rng) for _ in range(n_tournament)]
        parents += [pop[int(rng.integers(0, len(pop)))] for _ in range(n_children - n_tournament)]
        if len(parents) % 2:
            parents.append(parents[-1])

        children: list[Chromosome] = []
        for k in range(0, len(parents), 2):
            g1 = parents[k].genome()
            g2 = parents[k + 1].genome()
            if rng.random() < config.crossover_rate:
                swap = rng.random(g1.size) < 0.5
                c1 = np.where(swap, g2, g1)
                c2 = np.where(swap, g1, g2)
            else:
                c1, c2 = g1.copy(), g2.copy()
            children.append(Chromosome.from_genome(c1))
            children.append(Chromosome.from_genome(c2))
        children = children[:n_children]
        for child in children:
            flips = rng.random(FILTER_BITS + N_MASK_BITS) < config.mutation_rate
            if flips.any():
                genome = child.genome()
                genome[flips] = ~genome[flips]
                child.filter_bits = genome[:FILTER_BITS]
                child.mask = genome[FILTER_BITS:]
            child.fitness = None
        pop = elites + children

    return best_ever, history


def subspace_dict(best: Chromosome, columns=CANONICAL_COLUMNS) -> dict:
    names = [c for c, m in zip(columns, best.mask) if m]
    return {
        "filter_size": decode_filter(best.filter_bits),
        "features": names,
        "fitness": best.fitness,
        "mask": "".join("1" if m else "0" for m in best.mask),
    }


def subspace_text(best: Chromosome, columns=CANONICAL_COLUMNS) -> str:
    """The optimal-subspace artifact as a small readable table."""
    info = subspace_dict(best, columns)
    return (
        "Filter Size | Optimal Features | Fitness\n"
        f"{info['filter_size']} | {', '.join(info['features'])} | {info['fitness']:.4f}\n"
    )

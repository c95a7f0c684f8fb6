"""Genetic search over flow preprocessing settings.

Each genome picks an input size, a window depth (number of sequential
flows), and a resize interpolation. Fitness trains a reduced-budget VAE
under that preprocessing, quantizes it, and reads the F1 score off the
labeled test videos; execution-time statistics ride along in the report
but are not optimized.
"""

from __future__ import annotations

import dataclasses
import json
import time

import numpy as np

from . import flow, preproc, vae
from .errors import ArgumentError, TrainingError
from .rng import sub_rng

INTERPS = ("nearest", "bilinear")
FLOWS_MIN, FLOWS_MAX = 1, 16


@dataclasses.dataclass(frozen=True)
class Genome:
    size_idx: int = 1
    flows: int = 5
    interp: str = "bilinear"

    def __post_init__(self):
        if not 0 <= self.size_idx < len(preproc.SIZES):
            raise ArgumentError(f"size_idx must be in [0, {len(preproc.SIZES) - 1}]")
        if not FLOWS_MIN <= self.flows <= FLOWS_MAX:
            raise ArgumentError(f"flows must be in [{FLOWS_MIN}, {FLOWS_MAX}]")
        if self.interp not in INTERPS:
            raise ArgumentError(f"interp must be one of {INTERPS}")

    @property
    def size(self) -> tuple[int, int]:
        return preproc.SIZES[self.size_idx]

    def to_preproc(self) -> preproc.PreprocConfig:
        return preproc.PreprocConfig(size=self.size, flows=self.flows, interp=self.interp)


@dataclasses.dataclass(frozen=True)
class Candidate:
    genome: Genome
    f1: float
    et_mean_ms: float
    et_var_ms2: float
    failed: bool = False

    def __post_init__(self):
        if not 0.0 <= self.f1 <= 1.0:
            raise ArgumentError(f"f1 must be in [0, 1], got {self.f1}")
        if self.et_var_ms2 < 0:
            raise ArgumentError("ET variance cannot be negative")
        if not self.failed and not self.et_mean_ms > 0:
            raise ArgumentError("ET mean must be positive")


@dataclasses.dataclass(frozen=True)
class GaConfig:
    population: int = 12
    generations: int = 10
    tournament: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ArgumentError("population must be >= 4")
        if self.generations < 1:
            raise ArgumentError("need at least one generation")
        if not 1 <= self.tournament <= self.population:
            raise ArgumentError("tournament size must be in [1, population]")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ArgumentError(f"{name} must be in [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ArgumentError("elitism must be in [0, population)")


# ---------------------------------------------------------------------------
# genome sampling and evolution

def random_genome(rng: np.random.Generator) -> Genome:
    return Genome(size_idx=int(rng.integers(0, len(preproc.SIZES))),
                  flows=int(rng.integers(FLOWS_MIN, FLOWS_MAX + 1)),
                  interp=INTERPS[int(rng.integers(0, len(INTERPS)))])


def _mutate_gene(g: Genome, which: int, rng: np.random.Generator) -> Genome:
    if which == 0:
        return dataclasses.replace(g, size_idx=int(rng.integers(0, len(preproc.SIZES))))
    if which == 1:
        return dataclasses.replace(g, flows=int(rng.integers(FLOWS_MIN, FLOWS_MAX + 1)))
    return dataclasses.replace(g, interp=INTERPS[int(rng.integers(0, len(INTERPS)))])


def _tournament(fitnesses, cfg: GaConfig, rng: np.random.Generator) -> int:
    picks = rng.integers(0, len(fitnesses), size=cfg.tournament)
    best = int(picks[0])
    for i in picks[1:]:
        if fitnesses[int(i)] > fitnesses[best]:
            best = int(i)
    return best


def evolve(population: list[Genome], fitnesses, cfg: GaConfig,
           rng: np.random.Generator) -> list[Genome]:
    """One generation: elitism, tournament selection, uniform crossover,
    per-gene resampling mutation."""
    if len(population) != cfg.population or len(fitnesses) != cfg.population:
        raise ArgumentError("population and fitness lists must match the configured size")
    order = sorted(range(cfg.population), key=lambda i: (-fitnesses[i], i))
    nxt = [population[order[i]] for i in range(cfg.elitism)]
    while len(nxt) < cfg.population:
        pa = population[_tournament(fitnesses, cfg, rng)]
        pb = population[_tournament(fitnesses, cfg, rng)]
        if rng.random() < cfg.crossover_rate:
            child = Genome(
                size_idx=(pa if rng.random() < 0.5 else pb).size_idx,
                flows=(pa if rng.random() < 0.5 else pb).flows,
                interp=(pa if rng.random() < 0.5 else pb).interp)
        else:
            child = pa
        for gene in range(3):
            if rng.random() < cfg.mutation_rate:
                child = _mutate_gene(child, gene, rng)
        nxt.append(child)
    return nxt


@dataclasses.dataclass(frozen=True)
class GaResult:
    best: Genome
    best_fitness: float
    history: tuple[float, ...]          # best fitness per generation
    evaluations: dict                   # genome -> Candidate | float
    generations: int


def _fitness_value(res) -> float:
    return res.f1 if isinstance(res, Candidate) else float(res)


def run_ga(eval_fn, cfg: GaConfig | None = None, seed: int | None = None) -> GaResult:
    """Evolve genomes against eval_fn (genome -> Candidate or plain float).

    Fitness is memoized per genome, so no genome is evaluated twice in one
    run. The RNG stream is derived from cfg.seed (or the seed override).
    """
    cfg = cfg or GaConfig()
    rng = sub_rng(cfg.seed if seed is None else seed, "ga.run")
    cache: dict[Genome, object] = {}

    def evaluate(g: Genome):
        if g not in cache:
            cache[g] = eval_fn(g)
        return cache[g]

    population = [random_genome(rng) for _ in range(cfg.population)]
    history = []
    for _ in range(cfg.generations):
        fitnesses = [_fitness_value(evaluate(g)) for g in population]
        history.append(max(fitnesses))
        population = evolve(population, fitnesses, cfg, rng)
    # the evolved population carries the elite; score it for the final pick
    fitnesses = [_fitness_value(evaluate(g)) for g in population]
    history.append(max(fitnesses))
    best_g, best_f = max(zip(population, fitnesses), key=lambda t: t[1])
    return GaResult(best=best_g, best_fitness=best_f, history=tuple(history),
                    evaluations=cache, generations=cfg.generations)


# ---------------------------------------------------------------------------
# real fitness: VAE under the genome's preprocessing

class FitnessEvaluator:
    """Trains and scores one detector per genome on shared video data.

    train_gray: list of full-resolution grayscale frames (all ID).
    test_videos: list of (gray frame list, per-frame OOD labels).
    Flow is computed once per video at the native camera resolution and
    cached; each genome only changes how the cached fields are resized
    and stacked, so the cache is independent of the genes.
    """

    def __init__(self, train_gray, test_videos, vae_epochs: int = 8,
                 latent: int = 32, beta: float = 1e-5, quantile: float = 0.99,
                 seed: int = 0, et_runs: int = 100, et_mode: str = "wall"):
        if len(train_gray) < 2:
            raise ArgumentError("need at least two training frames")
        if not test_videos:
            raise ArgumentError("need at least one labeled test video")
        if et_mode not in ("wall", "virtual"):
            raise ArgumentError(f"et_mode must be wall or virtual, got {et_mode!r}")
        self.train_gray = train_gray
        self.test_videos = test_videos
        self.vae_epochs = vae_epochs
        self.latent = latent
        self.beta = beta
        self.quantile = quantile
        self.seed = seed
        self.et_runs = et_runs
        self.et_mode = et_mode
        self._flow_cache: dict = {}

    def _flows(self, key: str, frames):
        if key not in self._flow_cache:
            self._flow_cache[key] = flow.flow_sequence(frames)
        return self._flow_cache[key]

    def __call__(self, genome: Genome) -> Candidate:
        pp = genome.to_preproc()
        train_flows = self._flows("train", self.train_gray)
        n_train = len(self.train_gray)
        train_stacks, _ = preproc.window_dataset(
            train_flows, [False] * n_train, pp)
        cfg = vae.VaeConfig(in_dims=train_stacks.shape[1:], latent=self.latent,
                            beta=self.beta, epochs=self.vae_epochs,
                            seed=self.seed)
        try:
            model, _ = vae.train_vae(train_stacks, cfg)
        except TrainingError:
            return Candidate(genome, 0.0, 0.0, 0.0, failed=True)
        qmodel = vae.quantize_vae(model)
        threshold = vae.calibrate_threshold(
            vae.ood_scores(qmodel, train_stacks), self.quantile)
        preds, labels = [], []
        for vi, (frames, labs) in enumerate(self.test_videos):
            flows = self._flows(f"test{vi}", frames)
            stacks, wl = preproc.window_dataset(flows, labs, pp)
            preds.append(vae.ood_scores(qmodel, stacks) > threshold)
            labels.append(wl)
        rep = vae.evaluate_f1(np.concatenate(preds), np.concatenate(labels))
        et_mean, et_var = measure_et(genome, qmodel,
                                     self._flows("test0", self.test_videos[0][0]),
                                     n_runs=self.et_runs, mode=self.et_mode)
        return Candidate(genome, rep.f1, et_mean, et_var)


def measure_et(genome: Genome, model_or_scorer, flow_fields, n_runs: int = 100,
               warmup: int = 10, mode: str = "wall"):
    """Per-window execution time (ms) under the genome's preprocessing:
    resize a window of native-resolution flow fields, stack, and score.
    Returns (sample mean, sample variance) after the warm-up runs.

    Flow estimation itself is excluded: it runs upstream at the camera
    resolution and costs the same for every genome. mode "wall" times the
    real work; "virtual" charges a deterministic cost proportional to the
    pixels processed, for bit-reproducible reports.
    """
    if n_runs < 2:
        raise ArgumentError("need at least two timed runs for a variance")
    if len(flow_fields) < 1:
        raise ArgumentError("need at least one flow field")
    pp = genome.to_preproc()
    if callable(model_or_scorer):
        score = model_or_scorer
    else:
        def score(stack):
            return vae.ood_score(model_or_scorer, stack)

    if mode == "virtual":
        h, w = pp.size
        base = h * w * (genome.flows + 3) * 2.5e-5
        jitter = 1.0 + 0.01 * np.sin(np.arange(n_runs, dtype=np.float64))
        samples = base * jitter
        return float(samples.mean()), float(samples.var(ddof=1))

    samples = []
    n_src = len(flow_fields)
    for run in range(warmup + n_runs):
        window = [flow_fields[(run + j) % n_src] for j in range(pp.flows)]
        t0 = time.perf_counter()
        stack = preproc.build_stack(window, pp)
        score(stack)
        dt_ms = (time.perf_counter() - t0) * 1000.0
        if run >= warmup:
            samples.append(dt_ms)
    arr = np.asarray(samples, dtype=np.float64)
    return float(arr.mean()), float(arr.var(ddof=1))


# ---------------------------------------------------------------------------
# reports

CSV_HEADER = "size,flows,interp,f1,et_mean_ms,et_var_ms2"


def candidates_csv(path: str, candidates) -> None:
    """Table-shaped report, one row per candidate."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(CSV_HEADER + "\n")
        for c in candidates:
            h, w = c.genome.size
            f.write(f"{h}x{w},{c.genome.flows},{c.genome.interp},"
                    f"{c.f1:.4f},{c.et_mean_ms:.3f},{c.et_var_ms2:.3f}\n")


def write_run_log(path: str, result: GaResult, cfg: GaConfig) -> None:
    best = result.best
    log = {
        "seed": cfg.seed,
        "population": cfg.population,
        "generations": result.generations,
        "best": {"size": f"{best.size[0]}x{best.size[1]}",
                 "flows": best.flows, "interp": best.interp},
        "best_fitness": result.best_fitness,
        "history": list(result.history),
        "evaluated": len(result.evaluations),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(log, f, indent=1, sort_keys=True)
        f.write("\n")

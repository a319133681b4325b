"""Genetic programming over machine pairs.

Fitness is 1 - max recall of the evaluated classifier against the simulated
defended dataset. Client and relay machines evolve as separate lineages and
never exchange states; selection is fitness-weighted, crossover splices
complete states at a single point, and mutation redraws state parts.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field, replace

from .machine import (
    CLIENT,
    DIST_FAMILIES,
    DIST_GEOMETRIC,
    DIST_LOGISTIC,
    DIST_LOG_LOGISTIC,
    DIST_NONE,
    DIST_PARETO,
    DIST_UNIFORM,
    DIST_WEIBULL,
    EVENTS,
    RELAY,
    DistSpec,
    MachinePair,
    MachineSpec,
    NO_DIST,
    PaddingBudget,
    StateSpec,
    parse_machine_spec,
    serialize_machine_spec,
)

RANDOM_MACHINE_STATES = 4
TRANSITION_EDGE_PROB = 0.3

# dist_added_shift_usec dominates the final padding delay, so fresh draws
# keep it small
IAT_SHIFT_MAX_USEC = 10_000


def _draw_params(family, slot, rng):
    """Documented per-family parameter ranges for fresh distributions."""
    delay = slot == "iat"
    if family == DIST_UNIFORM:
        low = rng.uniform(0, 20_000 if delay else 50)
        return low, low + rng.uniform(0, 20_000 if delay else 100)
    if family == DIST_LOGISTIC:
        return rng.uniform(0, 20_000) if delay else rng.uniform(1, 100), (
            rng.uniform(1, 5_000) if delay else rng.uniform(1, 50)
        )
    if family == DIST_LOG_LOGISTIC:
        if delay:
            return rng.uniform(1, 20_000), rng.uniform(0.5, 5)
        return rng.uniform(1, 100), rng.uniform(1, 10)
    if family == DIST_GEOMETRIC:
        return rng.uniform(0.001 if delay else 0.01, 1.0), 0.0
    if family == DIST_WEIBULL:
        return rng.uniform(1, 20_000 if delay else 100), rng.uniform(0.5, 5)
    if family == DIST_PARETO:
        return rng.uniform(1, 10_000 if delay else 20), rng.uniform(1, 5)
    raise ValueError(f"no parameter ranges for {family!r}")


def random_dist(slot, rng):
    family = rng.choice(DIST_FAMILIES)
    if family == DIST_NONE:
        return NO_DIST
    p1, p2 = _draw_params(family, slot, rng)
    shift = rng.randint(0, IAT_SHIFT_MAX_USEC) if slot == "iat" else 0
    return DistSpec(family, p1, p2, added_shift_usec=shift)


def random_transitions(n_states, rng):
    out = {}
    for event in EVENTS:
        if rng.random() < TRANSITION_EDGE_PROB:
            out[event] = rng.randrange(n_states)
    return out


def random_machine(role, budget, rng):
    """A fresh 4-state machine with uniformly drawn families and sparse edges."""
    states = tuple(
        StateSpec(
            iat=random_dist("iat", rng),
            length=random_dist("length", rng),
            transitions=random_transitions(RANDOM_MACHINE_STATES, rng),
        )
        for _ in range(RANDOM_MACHINE_STATES)
    )
    return MachineSpec(states=states, budget=budget, endpoint_role=role, start_state=0)


def crossover(a, b, rng):
    """Single-point crossover between complete states; head from a, tail from b."""
    n = len(a.states)
    if n != len(b.states):
        raise ValueError(f"state counts differ: {n} vs {len(b.states)}")
    if n < 2:
        raise ValueError("crossover needs at least 2 states")
    cut = rng.randint(1, n - 1)
    return replace(a, states=a.states[:cut] + b.states[cut:])


def mutate(machine, p, rng):
    """Redraw each state part (iat, length, transitions) with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("mutation probability must be in [0, 1]")
    n = len(machine.states)
    states = []
    for state in machine.states:
        iat = random_dist("iat", rng) if rng.random() < p else state.iat
        length = random_dist("length", rng) if rng.random() < p else state.length
        transitions = random_transitions(n, rng) if rng.random() < p else state.transitions
        states.append(StateSpec(iat=iat, length=length, max_length=state.max_length,
                                transitions=transitions))
    return replace(machine, states=tuple(states))


@dataclass
class Individual:
    pair: MachinePair
    fitness: float | None = None

    def __post_init__(self):
        if self.fitness is not None and not 0.0 <= self.fitness <= 1.0:
            raise ValueError(f"fitness {self.fitness} outside [0, 1]")


@dataclass
class EvolutionConfig:
    population_size: int = 10
    elite_count: int = 1
    diversity_count: int = 0
    mutation_prob: float = 0.1
    seed: int | str = 0
    budget: PaddingBudget = field(
        default_factory=lambda: PaddingBudget(allowed_padding_count=1000, max_padding_percent=50)
    )

    def __post_init__(self):
        if self.elite_count + self.diversity_count >= self.population_size:
            raise ValueError("elite + diversity must leave room for offspring")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must be in [0, 1]")


def select_parent(population, rng):
    """Fitness-proportional choice; uniform when every fitness is zero."""
    for ind in population:
        if ind.fitness is None:
            raise ValueError("population must be fully evaluated before selection")
    total = sum(ind.fitness for ind in population)
    if total == 0.0:
        return population[rng.randrange(len(population))]
    x = rng.random() * total
    acc = 0.0
    for ind in population:
        acc += ind.fitness
        if x < acc:
            return ind
    return population[-1]


def initial_population(cfg, fitness_fn):
    population = []
    for i in range(cfg.population_size):
        pair = MachinePair(
            client=random_machine(CLIENT, cfg.budget, random.Random(f"{cfg.seed}|init{i}|client")),
            relay=random_machine(RELAY, cfg.budget, random.Random(f"{cfg.seed}|init{i}|relay")),
        )
        population.append(Individual(pair=pair, fitness=fitness_fn(pair)))
    return population


def next_generation(population, cfg, fitness_fn, generation=0):
    """Elites carry over verbatim; offspring fill the remaining slots.

    Client and relay children come from independently selected parents of
    their own lineage. Offspring fitness is evaluated once, here.
    """
    ranked = sorted(range(len(population)), key=lambda i: (-population[i].fitness, i))
    out = [population[i] for i in ranked[: cfg.elite_count]]
    diversity_rng = random.Random(f"{cfg.seed}|gen{generation}|diversity")
    for _ in range(cfg.diversity_count):
        out.append(population[diversity_rng.randrange(len(population))])
    for slot in range(len(out), cfg.population_size):
        child_sides = {}
        for side in (CLIENT, RELAY):
            rng = random.Random(f"{cfg.seed}|gen{generation}|slot{slot}|{side}")
            pa = getattr(select_parent(population, rng).pair, side)
            pb = getattr(select_parent(population, rng).pair, side)
            child_sides[side] = mutate(crossover(pa, pb, rng), cfg.mutation_prob, rng)
        pair = MachinePair(client=child_sides[CLIENT], relay=child_sides[RELAY])
        out.append(Individual(pair=pair, fitness=fitness_fn(pair)))
    return out


def save_checkpoint(population, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, ind in enumerate(population):
        path = os.path.join(out_dir, f"ind-{i:02d}.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(serialize_machine_spec(ind.pair))
        lines.append(f"{i},{ind.fitness!r}\n")
    with open(os.path.join(out_dir, "fitness.csv"), "w", encoding="utf-8") as f:
        f.write("individual,fitness\n")
        f.writelines(lines)


def load_checkpoint(out_dir):
    population = []
    with open(os.path.join(out_dir, "fitness.csv"), encoding="utf-8") as f:
        next(f)  # header
        for line in f:
            idx, fitness = line.strip().split(",")
            path = os.path.join(out_dir, f"ind-{int(idx):02d}.txt")
            with open(path, encoding="utf-8") as spec:
                pair = parse_machine_spec(spec.read())
            population.append(Individual(pair=pair, fitness=float(fitness)))
    return population


def run_evolution(cfg, fitness_fn, generations, out_dir=None, log=None):
    """Drive the loop; returns the final population.

    When out_dir is set, each generation checkpoints under gen-<g>/ and one
    log line records the generation, best and mean fitness, and the best
    individual's spec-file path.
    """
    population = initial_population(cfg, fitness_fn)
    for g in range(generations + 1):
        if g > 0:
            population = next_generation(population, cfg, fitness_fn, generation=g)
        best_i = max(range(len(population)), key=lambda i: (population[i].fitness, -i))
        best = population[best_i]
        mean = sum(ind.fitness for ind in population) / len(population)
        best_path = ""
        if out_dir is not None:
            gen_dir = os.path.join(out_dir, f"gen-{g:03d}")
            save_checkpoint(population, gen_dir)
            best_path = os.path.join(gen_dir, f"ind-{best_i:02d}.txt")
        if log is not None:
            log.append((g, best.fitness, mean, best_path))
    return population

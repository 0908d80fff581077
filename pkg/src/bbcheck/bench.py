"""Benchmark system generators and model import.

Three families: fixed grid worlds described by a terrain map, seeded random
grid worlds with a guaranteed hole-free route to the goal, and a slot
machine with a full- and a limited-observability labeling.  Externally
obtained models come in through the shared text format via `load_mdp`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .mdp import Mdp, Output, ensure_valid, load_mdp_file

TERRAINS = ("concrete", "grass", "wall", "mud", "pavement", "gravel", "sand")

# Lateral-deviation probability per terrain of the departure cell; a move
# goes straight with 1 - 2*slip, so deviations stay small on every terrain.
DEFAULT_SLIP = {
    "concrete": 0.02,
    "grass": 0.04,
    "mud": 0.08,
    "pavement": 0.01,
    "gravel": 0.06,
    "sand": 0.10,
    "wall": 0.0,
}

MOVES = (("east", (1, 0)), ("south", (0, 1)), ("west", (-1, 0)), ("north", (0, -1)))

RANDOM_GRID_SIZES = (4, 8, 10, 12, 14)


@dataclass
class GridSpec:
    width: int
    height: int
    terrain: dict[tuple[int, int], str]
    start: tuple[int, int] = (0, 0)
    goal_cells: frozenset[tuple[int, int]] = frozenset()
    hole_cells: frozenset[tuple[int, int]] = frozenset()
    slip: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SLIP))

    def validated(self) -> "GridSpec":
        if self.width < 2 or self.height < 2:
            raise ValueError("grid dimensions must be at least 2x2")
        for x in range(self.width):
            for y in range(self.height):
                if (x, y) not in self.terrain:
                    raise ValueError(f"cell {(x, y)} has no terrain")
                t = self.terrain[(x, y)]
                if t not in TERRAINS:
                    raise ValueError(f"unknown terrain {t!r} at {(x, y)}")
        if self.terrain[self.start] == "wall":
            raise ValueError("start cell may not be a wall")
        for t, s in self.slip.items():
            if not 0.0 <= s <= 0.5:
                raise ValueError(f"slip for {t} must be in [0, 0.5], got {s}")
        return self


def grid_world(spec: GridSpec) -> Mdp:
    """Robot-on-a-grid MDP with lateral slip.

    A move lands on its straight target with probability 1 - 2*slip and on
    the two forward diagonals with slip each; deviations blocked by walls or
    the border fold into the straight target, and a straight move into a wall
    or off the grid stays put.  Cell labels are the terrain (or goal/hole);
    when one move could reach two same-labeled cells, the labels of those
    cells get their coordinates appended so the model stays deterministic.
    """
    spec = spec.validated()
    cells = [
        (x, y)
        for y in range(spec.height)
        for x in range(spec.width)
        if spec.terrain[(x, y)] != "wall"
    ]
    index = {c: i for i, c in enumerate(cells)}

    def free(c: tuple[int, int]) -> bool:
        x, y = c
        return (
            0 <= x < spec.width
            and 0 <= y < spec.height
            and spec.terrain[(x, y)] != "wall"
        )

    dists: list[list[dict[int, float]]] = []
    for c in cells:
        x, y = c
        s = spec.slip.get(spec.terrain[c], 0.0)
        row = []
        for _, (dx, dy) in MOVES:
            straight = (x + dx, y + dy)
            if not free(straight):
                straight = c
            dist: dict[int, float] = {index[straight]: 1.0 - 2.0 * s}
            for px, py in ((-dy, dx), (dy, -dx)):
                diag = (x + dx + px, y + dy + py)
                target = diag if free(diag) else straight
                k = index[target]
                dist[k] = dist.get(k, 0.0) + s
            row.append(dist)
        dists.append(row)

    base: dict[tuple[int, int], tuple[str, frozenset[str]]] = {}
    for c in cells:
        if c in spec.goal_cells:
            base[c] = ("goal", frozenset(("goal",)))
        elif c in spec.hole_cells:
            base[c] = ("hole", frozenset(("hole",)))
        else:
            t = spec.terrain[c]
            base[c] = (t, frozenset((t,)))

    # Disambiguate labels until no move has two distinct same-labeled targets.
    labels = {c: base[c][0] for c in cells}
    while True:
        conflicted: set[tuple[int, int]] = set()
        for i, c in enumerate(cells):
            for dist in dists[i]:
                seen: dict[str, int] = {}
                for k in dist:
                    lbl = labels[cells[k]]
                    if lbl in seen and seen[lbl] != k:
                        conflicted.add(cells[k])
                        conflicted.add(cells[seen[lbl]])
                    seen[lbl] = k
        fresh = {
            c: f"{base[c][0]}_{c[0]}_{c[1]}" for c in conflicted
            if labels[c] == base[c][0]
        }
        if not fresh:
            break
        labels.update(fresh)

    output_order: list[str] = []
    outputs: list[Output] = []
    out_index: dict[str, int] = {}
    for c in cells:
        lbl = labels[c]
        if lbl not in out_index:
            out_index[lbl] = len(outputs)
            outputs.append(Output(lbl, base[c][1]))
            output_order.append(lbl)

    mdp = Mdp(
        [f"c{x}_{y}" for x, y in cells],
        [name for name, _ in MOVES],
        outputs,
        index[spec.start],
        [out_index[labels[c]] for c in cells],
        [[sorted(d.items()) for d in row] for row in dists],
    )
    ensure_valid(mdp, require_deterministic=True)
    return mdp


def random_grid_world(size: int, seed: int) -> Mdp:
    """Seeded random square grid with at least one hole and a hole-free route.

    States are exactly size*size cells (holes instead of walls), so the state
    counts match the documented benchmark sizes.  Regeneration with the same
    (size, seed) yields an identical model.
    """
    if size not in RANDOM_GRID_SIZES:
        raise ValueError(f"size must be one of {RANDOM_GRID_SIZES}, got {size}")
    rng = random.Random(f"gridworld:{size}:{seed}")
    open_terrains = [t for t in TERRAINS if t != "wall"]
    for _ in range(1000):
        terrain = {
            (x, y): rng.choice(open_terrains)
            for y in range(size)
            for x in range(size)
        }
        start = (0, 0)
        goal = (size - 1, size - 1) if rng.random() < 0.5 else (
            rng.randrange(size // 2, size),
            rng.randrange(size // 2, size),
        )
        holes = set()
        for y in range(size):
            for x in range(size):
                c = (x, y)
                if c not in (start, goal) and rng.random() < 0.12:
                    holes.add(c)
        if not holes:
            continue
        if not _route_exists(size, start, goal, holes):
            continue
        spec = GridSpec(
            width=size,
            height=size,
            terrain=terrain,
            start=start,
            goal_cells=frozenset((goal,)),
            hole_cells=frozenset(holes),
        )
        return grid_world(spec)
    raise RuntimeError(f"no viable grid found for size={size}, seed={seed}")


def _route_exists(size, start, goal, holes) -> bool:
    frontier = [start]
    seen = {start}
    while frontier:
        x, y = frontier.pop()
        if (x, y) == goal:
            return True
        for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            c = (x + dx, y + dy)
            if (
                0 <= c[0] < size
                and 0 <= c[1] < size
                and c not in holes
                and c not in seen
            ):
                seen.add(c)
                frontier.append(c)
    return False


@dataclass
class SlotSpec:
    """Three-reel slot machine with a stop lottery.

    The player starts with `initial_spins`; stopping either ends the game
    (probability 1 - extra_prob) or grants `extra_spins` more, capped at
    `max_spins` total.  Spinning with no spins left ends the game.  The
    bar probability for the k-th spin is `bar_schedule[k]`, non-increasing.
    """

    max_spins: int = 5
    initial_spins: int = 3
    extra_spins: int = 2
    extra_prob: float = 0.5
    bar_schedule: tuple[float, ...] = (0.55, 0.45, 0.35, 0.25, 0.15)
    observability: str = "full"  # "full" | "limited"

    def validated(self) -> "SlotSpec":
        if len(self.bar_schedule) < self.max_spins:
            raise ValueError("bar schedule must cover max_spins entries")
        prev = 1.0
        for p in self.bar_schedule:
            if not 0.0 < p <= 1.0:
                raise ValueError(f"bar probability {p} outside (0, 1]")
            if p > prev:
                raise ValueError("bar schedule must be non-increasing")
            prev = p
        if not 0 < self.initial_spins <= self.max_spins:
            raise ValueError("need 0 < initial_spins <= max_spins")
        if not 0.0 < self.extra_prob < 1.0:
            raise ValueError("extra_prob must be in (0,1)")
        if self.observability not in ("full", "limited"):
            raise ValueError(f"unknown observability {self.observability!r}")
        return self


_REEL = ("blank", "bar", "apple")


def slot_machine(spec: SlotSpec) -> Mdp:
    spec = spec.validated()
    inputs = ["reel1", "reel2", "reel3", "stop"]

    # State: (reels, spins used, allowance, phase) with phase play/bar3/end.
    initial = (("blank", "blank", "blank"), 0, spec.initial_spins, "play")
    states: list[tuple] = [initial]
    index: dict[tuple, int] = {initial: 0}
    trans: list[list[list[tuple[int, float]]]] = []

    def intern(state: tuple) -> int:
        k = index.get(state)
        if k is None:
            k = len(states)
            index[state] = k
            states.append(state)
        return k

    pos = 0
    while pos < len(states):
        reels, used, allow, phase = states[pos]
        row: list[list[tuple[int, float]]] = []
        if phase != "play":
            row = [[(pos, 1.0)] for _ in inputs]
        else:
            prize = "bar3" if all(r == "bar" for r in reels) else "end"
            for i, a in enumerate(inputs):
                if a == "stop":
                    done = intern((reels, used, allow, prize))
                    cont = intern((reels, used, min(allow + spec.extra_spins, spec.max_spins), "play"))
                    dist = {done: 1.0 - spec.extra_prob}
                    dist[cont] = dist.get(cont, 0.0) + spec.extra_prob
                    row.append(sorted(dist.items()))
                else:
                    reel_i = int(a[-1]) - 1
                    if used >= allow:
                        done = intern((reels, used, allow, prize))
                        row.append([(done, 1.0)])
                        continue
                    p_bar = spec.bar_schedule[used]
                    bar_reels = tuple(
                        "bar" if k == reel_i else r for k, r in enumerate(reels)
                    )
                    apple_reels = tuple(
                        "apple" if k == reel_i else r for k, r in enumerate(reels)
                    )
                    succ_bar = intern((bar_reels, used + 1, allow, "play"))
                    if p_bar >= 1.0:
                        row.append([(succ_bar, 1.0)])
                    else:
                        succ_apple = intern((apple_reels, used + 1, allow, "play"))
                        row.append(
                            sorted({succ_bar: p_bar, succ_apple: 1.0 - p_bar}.items())
                        )
        trans.append(row)
        pos += 1

    def label(state: tuple) -> tuple[str, frozenset[str]]:
        reels, _, _, phase = state
        if phase == "bar3":
            return "BAR3", frozenset(("BAR3",))
        if phase == "end":
            return "end", frozenset(("end",))
        if spec.observability == "limited":
            mask = "".join("1" if r == "bar" else "0" for r in reels)
            lbl = f"bars_{mask}"
        else:
            lbl = "_".join(reels)
        return lbl, frozenset((lbl,))

    outputs: list[Output] = []
    out_index: dict[str, int] = {}
    labels: list[int] = []
    for st in states:
        lbl, props = label(st)
        if lbl not in out_index:
            out_index[lbl] = len(outputs)
            outputs.append(Output(lbl, props))
        labels.append(out_index[lbl])

    names = [f"s{k}" for k in range(len(states))]
    mdp = Mdp(names, inputs, outputs, 0, labels, trans)
    ensure_valid(mdp, require_deterministic=True)
    return mdp


def load_mdp(path: str) -> Mdp:
    """Load a model file and validate it as a deterministic MDP."""
    return ensure_valid(load_mdp_file(path), require_deterministic=True)

"""Action chunks, the preset chunk library, and distance-based proposal distributions.

A chunk is a fixed-length tuple of low-level action names. Each action has a
fixed 3-d numeric embedding (dx, dy, gripper); a chunk embeds as the
concatenation of its per-action embeddings, and chunk distance is the L2 norm
of the embedding difference. Proposal distributions are softmaxes over
exp(-distance / tau), either over the whole library ("beta") or renormalized
over a sampled candidate subset ("psi").
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, UsageError

UP = "Up"
DOWN = "Down"
LEFT = "Left"
RIGHT = "Right"
GRASP = "Grasp"
RELEASE = "Release"
NOOP = "Noop"

ACTIONS = (UP, DOWN, LEFT, RIGHT, GRASP, RELEASE, NOOP)

# Per-action embedding: (dx, dy, gripper). y grows upward.
ACTION_EMBEDDING = {
    UP: (0.0, 1.0, 0.0),
    DOWN: (0.0, -1.0, 0.0),
    LEFT: (-1.0, 0.0, 0.0),
    RIGHT: (1.0, 0.0, 0.0),
    GRASP: (0.0, 0.0, 1.0),
    RELEASE: (0.0, 0.0, -1.0),
    NOOP: (0.0, 0.0, 0.0),
}

MOVE_ACTIONS = (UP, DOWN, LEFT, RIGHT)

Chunk = tuple[str, ...]

DEFAULT_CHUNK_LEN = 4
DEFAULT_LIBRARY_SIZE = 64
DEFAULT_TAU = 1.0


def as_chunk(actions, chunk_len: int = DEFAULT_CHUNK_LEN) -> Chunk:
    """Validate and normalize an action sequence into a chunk tuple."""
    chunk = tuple(actions)
    if len(chunk) != chunk_len:
        raise UsageError(f"chunk must have exactly {chunk_len} actions, got {len(chunk)}")
    for a in chunk:
        if a not in ACTION_EMBEDDING:
            raise UsageError(f"unknown action symbol {a!r}")
    return chunk


def embed_chunk(chunk: Chunk) -> np.ndarray:
    """Flatten a chunk into its numeric embedding of length 3 * len(chunk)."""
    out = np.empty(3 * len(chunk))
    for i, a in enumerate(chunk):
        out[3 * i : 3 * i + 3] = ACTION_EMBEDDING[a]
    return out


def chunk_distance(c1: Chunk, c2: Chunk) -> float:
    """Euclidean distance between the flattened embeddings of two equal-length chunks."""
    if len(c1) != len(c2):
        raise UsageError(f"chunk lengths differ: {len(c1)} vs {len(c2)}")
    return float(np.linalg.norm(embed_chunk(c1) - embed_chunk(c2)))


@dataclass(frozen=True)
class ChunkDistribution:
    """Probabilities over chunk library indices. support[i] pairs with probs[i]."""

    support: tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise UsageError("support and probs must have equal length")


def _softmax_over_distances(distances: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ConfigError(f"softmax temperature must be positive, got {tau}")
    # Shift by the minimum distance: identical after normalization, but stable
    # for very small tau.
    shifted = (distances - distances.min()) / tau
    weights = np.exp(-shifted)
    return weights / weights.sum()


class ChunkLibrary:
    """Ordered collection of distinct chunks with precomputed embeddings."""

    def __init__(self, chunks: list[Chunk]):
        if len(set(chunks)) != len(chunks):
            raise ConfigError("library contains duplicate chunks")
        if not chunks:
            raise ConfigError("library is empty")
        self.chunk_len = len(chunks[0])
        self.chunks = [as_chunk(c, self.chunk_len) for c in chunks]
        self.embeddings = np.stack([embed_chunk(c) for c in self.chunks])
        self._index = {c: i for i, c in enumerate(self.chunks)}

    def __len__(self) -> int:
        return len(self.chunks)

    def __getitem__(self, i: int) -> Chunk:
        return self.chunks[i]

    def index_of(self, chunk: Chunk) -> int:
        return self._index[chunk]

    def distances_to(self, center: Chunk) -> np.ndarray:
        """Distances from every library chunk to the given center chunk."""
        diff = self.embeddings - embed_chunk(center)
        return np.sqrt((diff * diff).sum(axis=1))

    def nearest(self, chunk: Chunk) -> int:
        """Index of the library chunk closest in embedding space (ties: lowest index)."""
        return int(np.argmin(self.distances_to(chunk)))

    def to_json(self) -> str:
        return json.dumps(
            {"chunk_len": self.chunk_len, "chunks": [list(c) for c in self.chunks]},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ChunkLibrary":
        data = json.loads(text)
        chunk_len = data["chunk_len"]
        return cls([as_chunk(c, chunk_len) for c in data["chunks"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ChunkLibrary":
        return cls.from_json(Path(path).read_text())


def structured_chunks(chunk_len: int = DEFAULT_CHUNK_LEN) -> list[Chunk]:
    """Deterministic core of the library.

    Single-action repetitions for all 7 symbols, plus partial move runs
    padded with Noop ([dir]*j + [Noop]*(len-j) for j < len). The partial runs
    are required for exact positioning: with full-length repeats alone a
    gripper 1..len-1 cells from its target can only overshoot, and the greedy
    proposer would livelock between two cells.
    """
    chunks: list[Chunk] = [(a,) * chunk_len for a in ACTIONS]
    for d in MOVE_ACTIONS:
        for run in range(1, chunk_len):
            chunks.append((d,) * run + (NOOP,) * (chunk_len - run))
    return chunks


def build_library(
    size: int = DEFAULT_LIBRARY_SIZE,
    chunk_len: int = DEFAULT_CHUNK_LEN,
    seed: int = 0,
) -> ChunkLibrary:
    """Build the preset library: structured core + seeded-random fill, deduplicated."""
    core = structured_chunks(chunk_len)
    if size < len(core):
        raise ConfigError(f"library size {size} below structured core size {len(core)}")
    rng = np.random.default_rng(seed)
    seen = set(core)
    chunks = list(core)
    while len(chunks) < size:
        candidate = tuple(ACTIONS[i] for i in rng.integers(0, len(ACTIONS), size=chunk_len))
        if candidate not in seen:
            seen.add(candidate)
            chunks.append(candidate)
    return ChunkLibrary(chunks)


def beta_distribution(center: Chunk, library: ChunkLibrary, tau: float = DEFAULT_TAU) -> ChunkDistribution:
    """Softmax over the whole library, centered on the given chunk."""
    probs = _softmax_over_distances(library.distances_to(center), tau)
    return ChunkDistribution(support=tuple(range(len(library))), probs=probs)


def psi_distribution(
    candidates: list[Chunk],
    center: Chunk,
    tau: float = DEFAULT_TAU,
    support: tuple[int, ...] | None = None,
) -> ChunkDistribution:
    """Softmax over distances restricted to (and renormalized over) the candidate set.

    `support` optionally carries the candidates' library indices for bookkeeping;
    it defaults to positions within the candidate list.
    """
    if not candidates:
        raise UsageError("candidate set is empty")
    distances = np.array([chunk_distance(center, c) for c in candidates])
    probs = _softmax_over_distances(distances, tau)
    if support is None:
        support = tuple(range(len(candidates)))
    return ChunkDistribution(support=support, probs=probs)

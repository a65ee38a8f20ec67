"""Identification banks and ID embeddings.

A bank holds ``capacity`` object vectors plus one background vector (the
last row). Assigning a bank to a multi-object label replaces every pixel by
the vector of the object that owns it. Panoptic banks keep separate thing
and stuff banks whose embeddings are concatenated and mixed by a conv.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..dataset import STUFF, THING
from ..errors import CapacityError, DataError, ShapeError
from ..tensor import DTYPE, conv2d, init_uniform

GENERIC_CAPACITY = 10
THING_CAPACITY = 10
STUFF_CAPACITY = 5


def _seeded_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    # orthogonal rows when they fit, scaled so each entry is O(1)
    g = rng.standard_normal((max(n, dim), dim))
    if n <= dim:
        q, _ = np.linalg.qr(g)
        vecs = q[:n]
    else:
        vecs = g[:n] / np.linalg.norm(g[:n], axis=1, keepdims=True)
    return (vecs * np.sqrt(dim)).astype(DTYPE)


@dataclass(frozen=True)
class IDBank:
    capacity: int
    dim: int
    vectors: np.ndarray  # (capacity + 1, dim); last row is background
    scale: str = ""

    def __post_init__(self):
        if self.vectors.shape != (self.capacity + 1, self.dim):
            raise ShapeError(f"ID bank vectors must be {(self.capacity + 1, self.dim)}, got {self.vectors.shape}")
        self.vectors.setflags(write=False)

    @classmethod
    def seeded(cls, capacity: int, dim: int, rng: np.random.Generator, scale: str = "") -> "IDBank":
        return cls(capacity, dim, _seeded_vectors(rng, capacity + 1, dim), scale)

    @classmethod
    def seeded_group(cls, capacities, dim: int, rng: np.random.Generator, scales=None) -> list:
        """Several banks whose rows come from one orthogonal set, so no bank's
        vectors project onto another's (when all rows fit in ``dim``)."""
        sizes = [c + 1 for c in capacities]
        rows = _seeded_vectors(rng, sum(sizes), dim)
        scales = scales or [""] * len(sizes)
        out, start = [], 0
        for c, n, tag in zip(capacities, sizes, scales):
            out.append(cls(c, dim, np.array(rows[start:start + n]), tag))
            start += n
        return out

    @property
    def background(self) -> np.ndarray:
        return self.vectors[self.capacity]

    def table(self, n_objects: int) -> np.ndarray:
        """Rows in label channel order: background, then objects 1..n."""
        if n_objects > self.capacity:
            raise CapacityError(f"{n_objects} objects exceed ID bank capacity {self.capacity}",
                                n_objects, self.capacity)
        return np.concatenate([self.vectors[self.capacity:], self.vectors[:n_objects]])

    def permuted(self, perm) -> "IDBank":
        """Bank whose object row ``i`` is this bank's row ``perm[i]``."""
        perm = list(perm)
        rows = np.array(self.vectors)
        rows[: len(perm)] = self.vectors[perm]
        return IDBank(self.capacity, self.dim, rows, self.scale)

    def with_vector(self, row: int, vec) -> "IDBank":
        rows = np.array(self.vectors)
        rows[row] = vec
        return IDBank(self.capacity, self.dim, rows, self.scale)


@dataclass(frozen=True)
class MultiObjectLabel:
    """Per-pixel object weights ``(K+1, h, w)``; channel 0 is background.

    Full-resolution labels are one-hot. Coarse-scale labels produced by
    :meth:`area_downsample` hold area fractions that still sum to 1.
    """

    weights: np.ndarray
    kinds: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=DTYPE)
        if w.ndim != 3 or w.shape[0] < 1:
            raise ShapeError(f"label weights must be (K+1, h, w), got {w.shape}")
        kinds = tuple(self.kinds) if self.kinds else (THING,) * (w.shape[0] - 1)
        if len(kinds) != w.shape[0] - 1:
            raise DataError(f"{len(kinds)} kind flags for {w.shape[0] - 1} objects")
        if any(k not in (THING, STUFF) for k in kinds):
            raise DataError(f"unknown kind flag in {kinds}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kinds", kinds)

    @classmethod
    def from_index_mask(cls, mask, n_objects: int | None = None, kinds=()) -> "MultiObjectLabel":
        mask = np.asarray(mask, dtype=np.int64)
        if n_objects is None:
            n_objects = int(mask.max()) if mask.size else 0
        if mask.size and mask.max() > n_objects:
            raise DataError(f"mask holds index {mask.max()} beyond {n_objects} objects")
        onehot = (mask[None] == np.arange(n_objects + 1)[:, None, None]).astype(DTYPE)
        return cls(onehot, kinds)

    @property
    def n_objects(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def size(self) -> tuple[int, int]:
        return self.weights.shape[1:]

    def area_downsample(self, r: int) -> "MultiObjectLabel":
        """Fraction of each object inside an ``r``-wide box centred on every ``r``-th pixel."""
        if r == 1:
            return self
        # width-r box centred on the sample: odd r is a plain box, even r
        # splits the two end taps in half
        taps = np.ones(r + 1 - r % 2)
        if r % 2 == 0:
            taps[[0, -1]] = 0.5
        taps /= r
        smooth = ndimage.correlate1d(self.weights, taps, axis=1, mode="nearest")
        smooth = ndimage.correlate1d(smooth, taps, axis=2, mode="nearest")
        return MultiObjectLabel(smooth[:, ::r, ::r], self.kinds)

    def split_kinds(self) -> tuple["MultiObjectLabel", "MultiObjectLabel"]:
        """Thing label and stuff label; pixels of the other kind become background."""
        out = []
        for kind in (THING, STUFF):
            keep = [i + 1 for i, k in enumerate(self.kinds) if k == kind]
            drop = [i + 1 for i, k in enumerate(self.kinds) if k != kind]
            bg = self.weights[0] + self.weights[drop].sum(axis=0) if drop else self.weights[0]
            out.append(MultiObjectLabel(np.concatenate([bg[None], self.weights[keep]]), (kind,) * len(keep)))
        return out[0], out[1]

    def permuted(self, perm) -> "MultiObjectLabel":
        """Relabel so that new object ``i+1`` is old object ``perm[i]+1``."""
        order = [0] + [p + 1 for p in perm]
        return MultiObjectLabel(self.weights[order], tuple(self.kinds[p] for p in perm))


def assign_id_embedding(bank: IDBank, label: MultiObjectLabel) -> np.ndarray:
    """ID embedding ``(dim, h, w)``: each pixel gets its owner's vector."""
    table = bank.table(label.n_objects)
    return np.einsum("khw,kd->dhw", label.weights, table).astype(DTYPE)


@dataclass(frozen=True)
class PanopticIDBanks:
    thing: IDBank
    stuff: IDBank
    aggregation: np.ndarray  # (dim, 2*dim, k, k)

    @classmethod
    def seeded(cls, dim: int, rng: np.random.Generator, thing_capacity: int = THING_CAPACITY,
               stuff_capacity: int = STUFF_CAPACITY, kernel: int = 3, scale: str = "") -> "PanopticIDBanks":
        thing, stuff = IDBank.seeded_group([thing_capacity, stuff_capacity], dim, rng, [scale, scale])
        agg = init_uniform(rng, (dim, 2 * dim, kernel, kernel), fan_in=2 * dim * kernel * kernel)
        return cls(thing, stuff, agg)

    @property
    def dim(self) -> int:
        return self.thing.dim

    def halves(self, label: MultiObjectLabel) -> tuple[np.ndarray, np.ndarray]:
        y_th, y_st = label.split_kinds()
        return assign_id_embedding(self.thing, y_th), assign_id_embedding(self.stuff, y_st)

    def replace(self, thing: IDBank | None = None, stuff: IDBank | None = None) -> "PanopticIDBanks":
        return PanopticIDBanks(thing or self.thing, stuff or self.stuff, self.aggregation)


def panoptic_id_embedding(banks: PanopticIDBanks, label: MultiObjectLabel) -> np.ndarray:
    th, st = banks.halves(label)
    return conv2d(np.concatenate([th, st]), banks.aggregation)


def id_embedding(bank, label: MultiObjectLabel) -> np.ndarray:
    if isinstance(bank, PanopticIDBanks):
        return panoptic_id_embedding(bank, label)
    return assign_id_embedding(bank, label)


def decoding_directions(bank, kinds) -> np.ndarray:
    """Embedding each label channel produces over a uniform region, ``(K+1, dim)``.

    For a generic bank these are the bank rows; for panoptic banks they are the
    aggregated concatenation of the thing and stuff halves.
    """
    if isinstance(bank, PanopticIDBanks):
        n_th = sum(k == THING for k in kinds)
        n_st = sum(k == STUFF for k in kinds)
        th_table = bank.thing.table(n_th)
        st_table = bank.stuff.table(n_st)
        mix = bank.aggregation.sum(axis=(2, 3))  # (dim, 2*dim)
        halves = [np.concatenate([th_table[0], st_table[0]])]
        i_th = i_st = 0
        for k in kinds:
            if k == THING:
                i_th += 1
                halves.append(np.concatenate([th_table[i_th], st_table[0]]))
            else:
                i_st += 1
                halves.append(np.concatenate([th_table[0], st_table[i_st]]))
        return (np.stack(halves) @ mix.T).astype(DTYPE)
    return bank.table(len(kinds))

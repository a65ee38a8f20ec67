"""Forward-only PAOT: pyramid matching with E-LSTT blocks and ID banks.

Scales run coarse to fine (strides 16, 16, 8, 4 by default). Each matching
scale owns an ID bank and a stack of E-LSTT blocks; between scales the
matched embedding is upsampled, added to the encoder feature of the next
scale and passed through a residual conv block. The finest scale is used
for decoding only. Logits estimate how much of each object's ID the final
embedding carries, using the finest matching scale's bank (or all banks
with ``readout="all"``).

All weights are seeded, never trained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dataset import STUFF, THING
from ..errors import CapacityError, DataError, ShapeError
from ..tensor import (DTYPE, conv2d, downsample, from_tokens, init_uniform, layer_norm,
                      relu, to_tokens, upsample2x)
from .attention import dilated_long_term_attention, short_term_attention
from .ids import (GENERIC_CAPACITY, STUFF_CAPACITY, THING_CAPACITY, IDBank, MultiObjectLabel,
                  PanopticIDBanks, decoding_directions, id_embedding)

GENERIC = "generic"
PANOPTIC = "panoptic"


@dataclass(frozen=True)
class PAOTConfig:
    dim: int = 64
    mode: str = GENERIC
    capacity: int = GENERIC_CAPACITY
    thing_capacity: int = THING_CAPACITY
    stuff_capacity: int = STUFF_CAPACITY
    strides: tuple = (16, 16, 8, 4)
    layers: tuple = (2, 1, 1, 0)
    dilation: tuple = (1, 1, 2, 2)
    window: tuple = (15, 15, 29, 57)
    ffn_mult: int = 2
    # "identity": query/key projections are a scaled identity, so attention
    # retrieves memory pixels whose normalised embedding matches the query.
    # "seeded": tied random query/key projections.
    retrieval: str = "identity"
    qk_gain: float = 4.0
    readout: str = "finest"
    # project every non-ID write (encoder features, values, FFN, decoders)
    # off the span of the readout directions, so logits only see matched IDs
    reserve_ids: bool = True
    mem_every: int = 2
    memory_cap: int | None = None
    seed: int = 0

    def __post_init__(self):
        n = len(self.strides)
        if not (len(self.layers) == len(self.dilation) == len(self.window) == n):
            raise DataError("strides, layers, dilation and window need one entry per scale")
        for a, b in zip(self.strides, self.strides[1:]):
            if a % b or a // b not in (1, 2):
                raise DataError(f"consecutive strides must keep or halve the stride, got {a}->{b}")
        if self.mode not in (GENERIC, PANOPTIC):
            raise DataError(f"mode must be generic or panoptic, got {self.mode!r}")
        if self.retrieval not in ("identity", "seeded"):
            raise DataError(f"retrieval must be identity or seeded, got {self.retrieval!r}")
        if self.readout not in ("finest", "all"):
            raise DataError(f"readout must be finest or all, got {self.readout!r}")
        if self.mem_every < 1:
            raise DataError("memory interval must be >= 1")

    @property
    def matching_scales(self) -> list[int]:
        return [i for i, n in enumerate(self.layers) if n > 0]


@dataclass
class FeaturePyramid:
    """Encoder features keyed by stride, each ``(dim, H/stride, W/stride)``."""

    features: dict
    image_size: tuple

    def __getitem__(self, stride: int) -> np.ndarray:
        return self.features[stride]

    def validate(self, strides) -> None:
        h, w = self.image_size
        for s in set(strides):
            f = self.features.get(s)
            if f is None:
                raise ShapeError(f"feature pyramid lacks stride {s}")
            if f.shape[1:] != (h // s, w // s):
                raise ShapeError(f"stride-{s} feature is {f.shape[1:]}, expected {(h // s, w // s)}")


@dataclass
class LayerCache:
    """Per-frame keys/values of one E-LSTT block, before any ID is added."""

    long_k: np.ndarray
    long_v: np.ndarray
    short_k: np.ndarray
    short_v: np.ndarray
    scale: int
    size: tuple


@dataclass
class MemoryStore:
    """Long-term memory frames and the short-term (previous frame) slot.

    Each stored frame is a list with one ``(keys, values)`` pair per E-LSTT
    block; values already include the frame's ID embedding.
    """

    cap: int | None = None
    long: list = field(default_factory=list)
    long_frames: list = field(default_factory=list)
    short: list | None = None

    @property
    def is_empty(self) -> bool:
        return not self.long

    def add(self, t: int, caches: list, id_tokens: dict) -> None:
        self.long.append([(c.long_k, c.long_v + id_tokens[c.scale]) for c in caches])
        self.long_frames.append(t)
        if self.cap is not None and len(self.long) > self.cap:
            # the first (reference) frame is always kept
            del self.long[1], self.long_frames[1]

    def set_short(self, caches: list, id_tokens: dict) -> None:
        self.short = [(c.short_k, c.short_v + id_tokens[c.scale]) for c in caches]

    def long_kv(self, layer: int):
        if not self.long:
            return None
        ks = [frame[layer][0] for frame in self.long]
        vs = [frame[layer][1] for frame in self.long]
        return np.concatenate(ks), np.concatenate(vs)


class ELSTTBlock:
    """Long-term dilated attention, short-term window attention, feed-forward.

    Pre-norm residual layout. Query and key share one projection.
    """

    def __init__(self, dim: int, rng, dilation: int, window: int, ffn_mult: int = 2,
                 retrieval: str = "identity", qk_gain: float = 4.0):
        self.dim = dim
        self.dilation = dilation
        self.window = window
        if retrieval == "identity":
            self.w_qk = (np.eye(dim) * qk_gain).astype(DTYPE)
            self.w_qk_short = self.w_qk
        else:
            self.w_qk = init_uniform(rng, (dim, dim), dim)
            self.w_qk_short = init_uniform(rng, (dim, dim), dim)
        self.w_v = init_uniform(rng, (dim, dim), dim)
        self.w_v_short = init_uniform(rng, (dim, dim), dim)
        self.w_ff1 = init_uniform(rng, (dim, ffn_mult * dim), dim)
        self.w_ff2 = init_uniform(rng, (ffn_mult * dim, dim), ffn_mult * dim)

    def __call__(self, x, appearance, size, long_kv, short_kv, self_ids=None):
        """Run the block on stream tokens ``x`` of grid ``size``.

        Queries and keys come from ``appearance`` (the frame's encoder
        feature tokens at this scale); values come from the stream.
        ``self_ids`` marks an ingest pass: the frame's own keys and values,
        with its ID embedding, join long-term memory and act as the
        short-term memory. Returns the new tokens and this frame's cache.
        """
        a = layer_norm(appearance)
        q = a @ self.w_qk
        v_self = layer_norm(x) @ self.w_v
        if self_ids is not None:
            mem_k, mem_v = q, v_self + self_ids
            if long_kv is not None:
                mem_k = np.concatenate([long_kv[0], mem_k])
                mem_v = np.concatenate([long_kv[1], mem_v])
            long_kv = (mem_k, mem_v)
        if long_kv is None:
            raise DataError("E-LSTT needs a non-empty long-term memory")
        x = x + dilated_long_term_attention(q, long_kv[0], long_kv[1], self.dilation, size)

        q2 = a @ self.w_qk_short
        v2_self = layer_norm(x) @ self.w_v_short
        if self_ids is not None:
            short_kv = (q2, v2_self + self_ids)
        if short_kv is not None:
            x = x + short_term_attention(q2, short_kv[0], short_kv[1], size, self.window)

        x = x + relu(layer_norm(x) @ self.w_ff1) @ self.w_ff2
        return x, (q, v_self, q2, v2_self)


class DecoderBlock:
    """Residual conv block: ``u + conv(relu(conv(u)))``."""

    def __init__(self, dim: int, rng):
        self.w1 = init_uniform(rng, (dim, dim, 3, 3), dim * 9)
        self.w2 = init_uniform(rng, (dim, dim, 3, 3), dim * 9)

    def __call__(self, u):
        return u + conv2d(relu(conv2d(u, self.w1)), self.w2)


class Encoder:
    """Three seeded conv stages producing stride 4, 8 and 16 features."""

    def __init__(self, dim: int, rng):
        self.w4 = init_uniform(rng, (dim, 3, 3, 3), 27)
        self.w8 = init_uniform(rng, (dim, dim, 3, 3), dim * 9)
        self.w16 = init_uniform(rng, (dim, dim, 3, 3), dim * 9)
        # without a bias the stem is scale invariant and layer norm would
        # map a dark colour onto a brighter one of the same hue
        self.b4 = init_uniform(rng, (dim, 1, 1), 1)

    def __call__(self, image) -> FeaturePyramid:
        img = np.asarray(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"expected an (H, W, 3) image, got {img.shape}")
        h, w = img.shape[:2]
        if h % 16 or w % 16:
            raise ShapeError(f"image size {h}x{w} is not a multiple of 16")
        x = (img.astype(DTYPE).transpose(2, 0, 1) / DTYPE(255) - DTYPE(0.5)) / DTYPE(0.25)
        x4 = downsample(relu(conv2d(x, self.w4) + self.b4), 4)
        x8 = downsample(relu(conv2d(x4, self.w8)), 2)
        x16 = downsample(relu(conv2d(x8, self.w16)), 2)
        return FeaturePyramid({4: x4, 8: x8, 16: x16}, (h, w))


class PAOT:
    """Seeded PAOT model. Holds parameters only; video state lives in :class:`MemoryStore`."""

    def __init__(self, config: PAOTConfig = PAOTConfig()):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg.dim, rng)
        scales = cfg.matching_scales
        tags = [f"{cfg.strides[i]}x#{i}" for i in scales]
        if cfg.mode == PANOPTIC:
            caps = [cfg.thing_capacity, cfg.stuff_capacity] * len(scales)
            flat = IDBank.seeded_group(caps, cfg.dim, rng, [t for t in tags for _ in (0, 1)])
            aggs = [init_uniform(rng, (cfg.dim, 2 * cfg.dim, 3, 3), 2 * cfg.dim * 9) for _ in scales]
            banks = [PanopticIDBanks(flat[2 * j], flat[2 * j + 1], aggs[j]) for j in range(len(scales))]
        else:
            banks = IDBank.seeded_group([cfg.capacity] * len(scales), cfg.dim, rng, tags)
        self.banks = dict(zip(scales, banks))
        self.blocks = []  # (scale index, block)
        for i in scales:
            for _ in range(cfg.layers[i]):
                self.blocks.append((i, ELSTTBlock(cfg.dim, rng, cfg.dilation[i], cfg.window[i],
                                                  cfg.ffn_mult, cfg.retrieval, cfg.qk_gain)))
        self.decoders = [DecoderBlock(cfg.dim, rng) for _ in cfg.strides[1:]]
        self.n_block_calls = 0
        self.feature_projector = None
        if cfg.reserve_ids:
            self._reserve_id_span()

    def _reserve_id_span(self) -> None:
        cfg = self.config
        if cfg.mode == PANOPTIC:
            kinds = (THING,) * cfg.thing_capacity + (STUFF,) * cfg.stuff_capacity
        else:
            kinds = (THING,) * cfg.capacity
        rows = np.concatenate([decoding_directions(b, kinds) for b in self.banks.values()]).astype(np.float64)
        u, sv, _ = np.linalg.svd(rows.T, full_matrices=False)
        u = u[:, sv > sv.max() * 1e-6]
        if u.shape[1] >= cfg.dim:
            raise DataError(f"ID directions fill all {cfg.dim} channels; raise dim or disable reserve_ids")
        proj = (np.eye(cfg.dim) - u @ u.T).astype(DTYPE)
        self.feature_projector = proj
        for _, block in self.blocks:
            block.w_v = block.w_v @ proj
            block.w_v_short = block.w_v_short @ proj
            block.w_ff2 = block.w_ff2 @ proj
        for dec in self.decoders:
            dec.w2 = np.einsum("po,oikl->pikl", proj, dec.w2).astype(DTYPE)

    # -- ID handling -------------------------------------------------------

    def check_capacity(self, kinds) -> None:
        cfg = self.config
        if cfg.mode == PANOPTIC:
            n_th = sum(k == THING for k in kinds)
            n_st = len(kinds) - n_th
            if n_th > cfg.thing_capacity or n_st > cfg.stuff_capacity:
                raise CapacityError(
                    f"{n_th} thing / {n_st} stuff objects exceed panoptic capacity "
                    f"{cfg.thing_capacity}+{cfg.stuff_capacity}", len(kinds),
                    cfg.thing_capacity + cfg.stuff_capacity)
        elif len(kinds) > cfg.capacity:
            raise CapacityError(f"{len(kinds)} objects exceed ID capacity {cfg.capacity}",
                                len(kinds), cfg.capacity)

    def id_tokens(self, label: MultiObjectLabel) -> dict:
        """ID embedding tokens of a full-resolution label at every matching scale."""
        out = {}
        for i, bank in self.banks.items():
            coarse = label.area_downsample(self.config.strides[i])
            out[i] = to_tokens(id_embedding(bank, coarse))
        return out

    def readout_matrix(self, kinds) -> np.ndarray:
        """``(K+1, dim)`` map from an embedding to per-channel label weights.

        The decoding directions of every matching scale are inverted jointly
        (pseudo-inverse), so IDs of one scale do not leak into another's
        estimate even when the directions are not orthogonal.
        """
        per_scale = [decoding_directions(self.banks[i], kinds) for i in self.config.matching_scales]
        stacked = np.concatenate(per_scale).astype(np.float64)
        inv = np.linalg.pinv(stacked.T).reshape(len(per_scale), len(kinds) + 1, -1)
        out = inv[-1] if self.config.readout == "finest" else inv.sum(axis=0)
        return out.astype(DTYPE)

    # -- forward -----------------------------------------------------------

    def encode(self, image) -> FeaturePyramid:
        feats = self.encoder(image)
        if self.feature_projector is not None:
            p = self.feature_projector
            feats = FeaturePyramid({s: np.einsum("po,ohw->phw", p, f).astype(DTYPE)
                                    for s, f in feats.features.items()}, feats.image_size)
        return feats

    def forward(self, feats: FeaturePyramid, memory: MemoryStore | None, kinds,
                ingest: dict | None = None):
        """Logits ``(K+1, H, W)`` and per-block caches for one frame.

        ``ingest`` holds the frame's own ID tokens (see :meth:`id_tokens`)
        when the frame comes with a label and should match against itself.
        """
        cfg = self.config
        feats.validate(cfg.strides)
        if ingest is None and (memory is None or memory.is_empty):
            raise DataError("memory is empty; ingest a reference frame first")
        self.check_capacity(kinds)
        h, w = feats.image_size
        caches = []
        e = None
        block_idx = 0
        for i, stride in enumerate(cfg.strides):
            size = (h // stride, w // stride)
            x = feats[stride]
            if e is None:
                e = x
            else:
                up = e if cfg.strides[i - 1] == stride else upsample2x(e)
                e = self.decoders[i - 1](up + x)
            if cfg.layers[i] == 0:
                continue
            tok = to_tokens(e)
            appearance = to_tokens(x)
            for _ in range(cfg.layers[i]):
                scale, block = self.blocks[block_idx]
                long_kv = memory.long_kv(block_idx) if memory is not None else None
                short_kv = memory.short[block_idx] if memory is not None and memory.short else None
                tok, (k1, v1, k2, v2) = block(tok, appearance, size, long_kv, short_kv,
                                              ingest[scale] if ingest is not None else None)
                self.n_block_calls += 1
                caches.append(LayerCache(k1, v1, k2, v2, scale, size))
                block_idx += 1
            e = from_tokens(tok, size)

        readout = self.readout_matrix(kinds)
        logits = np.einsum("kd,dhw->khw", readout, e)
        for _ in range(int(round(math.log2(cfg.strides[-1])))):
            logits = upsample2x(logits)
        if not np.all(np.isfinite(logits)):
            raise DataError("non-finite logits")
        return logits.astype(DTYPE), caches


def pyramid_forward(model: PAOT, feats: FeaturePyramid, memory: MemoryStore, kinds) -> np.ndarray:
    """Mask logits ``(K+1, H, W)`` of a frame matched against ``memory``."""
    logits, _ = model.forward(feats, memory, kinds)
    return logits

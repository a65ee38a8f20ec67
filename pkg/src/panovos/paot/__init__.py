"""Forward-only PAOT matching: ID banks, E-LSTT attention, pyramid decoding."""
from .attention import (attention, dilated_kv_length, dilated_long_term_attention,
                        short_term_attention)
from .ids import (GENERIC_CAPACITY, STUFF_CAPACITY, THING_CAPACITY, IDBank, MultiObjectLabel,
                  PanopticIDBanks, assign_id_embedding, panoptic_id_embedding)
from .model import (GENERIC, PANOPTIC, PAOT, ELSTTBlock, FeaturePyramid, MemoryStore,
                    PAOTConfig, pyramid_forward)
from .segment import segment_video

__all__ = [
    "GENERIC", "GENERIC_CAPACITY", "PANOPTIC", "PAOT", "STUFF_CAPACITY", "THING_CAPACITY",
    "ELSTTBlock", "FeaturePyramid", "IDBank", "MemoryStore", "MultiObjectLabel", "PAOTConfig",
    "PanopticIDBanks", "assign_id_embedding", "attention", "dilated_kv_length",
    "dilated_long_term_attention", "panoptic_id_embedding", "pyramid_forward",
    "segment_video", "short_term_attention",
]

"""Random mask generators shared by the tests."""
import numpy as np


def random_index_mask(rng, h, w, n_objects, density=0.6):
    m = rng.integers(1, n_objects + 1, size=(h, w)) if n_objects else np.zeros((h, w), dtype=int)
    m[rng.random((h, w)) > density] = 0
    return m.astype(np.uint16)


def blob_mask(rng, h, w, n_objects):
    """Index mask of overlapping random rectangles, later objects on top."""
    m = np.zeros((h, w), dtype=np.uint16)
    for obj in range(1, n_objects + 1):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = y0 + rng.integers(1, h // 2 + 2), x0 + rng.integers(1, w // 2 + 2)
        m[y0:y1, x0:x1] = obj
    return m


def static_disk_video(seed, size=256, n_frames=3):
    """One textured disk on a grey background, repeated unchanged in every frame."""
    from panovos.dataset import SEEN, THING, ClassEntry, VideoRecord, extract_reference_masks

    rng = np.random.default_rng(seed)
    r = rng.uniform(size / 6, size / 4)
    cy, cx = rng.uniform(r + 1, size - r - 1, 2)
    yy, xx = np.mgrid[:size, :size]
    m = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint16)
    colour = rng.integers(20, 236, 3)
    texture = rng.integers(-6, 7, (size, size, 3))
    img = np.clip(np.where(m[..., None] > 0, colour, 110) + texture, 0, 255).astype(np.uint8)
    frames = [m] * n_frames
    return VideoRecord(f"disk_{seed}", tuple(frames), extract_reference_masks(frames),
                       {1: ClassEntry(1, THING, SEEN)}, tuple([img] * n_frames))


def fixed_point_agreement(seed, size=256):
    """Worst per-frame pixel agreement between prediction and the static reference."""
    from panovos.paot import PAOT, PAOTConfig, segment_video

    v = static_disk_video(seed, size)
    pred = segment_video(PAOT(PAOTConfig(seed=seed)), v)
    return min(float((p == g).mean()) for p, g in zip(pred[1:], v.frames[1:]))

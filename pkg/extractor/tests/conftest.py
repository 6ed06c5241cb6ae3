import numpy as np
import pytest


def write_clip_dir(path, n_frames, seed):
    """Frame folder of small distinct byte blobs. The hash backend reads
    frames as raw bytes, so no image decoding is involved."""
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_frames):
        (path / f"frame{i:03d}.jpg").write_bytes(rng.bytes(160))
    return path


@pytest.fixture
def clip_dirs(tmp_path):
    return [write_clip_dir(tmp_path / f"clip_{c}", 8 + c, 100 + c)
            for c in range(3)]

import numpy as np
import pytest

from pcbir.datapipe import BoundingBox
from pcbir.evalkit import Detection, GroundTruthBox


def random_box(rng, near=None):
    if near is None:
        w, h = rng.uniform(0.05, 0.4, 2)
        cx, cy = rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2)
    else:
        jitter = rng.uniform(-0.5, 0.5, 4) * np.array([near.w, near.h, near.w, near.h]) * rng.uniform(0, 0.8)
        cx, cy = near.cx + jitter[0], near.cy + jitter[1]
        w, h = max(near.w + jitter[2], 0.01), max(near.h + jitter[3], 0.01)
    return BoundingBox(0, float(cx), float(cy), float(w), float(h))


def random_ap_case(rng, max_dets=30, max_gts=10):
    """Small multi-image detection problem; often only a few distinct scores."""
    n_images = int(rng.integers(1, 4))
    n_gts = int(rng.integers(1, max_gts + 1))
    gts = [GroundTruthBox(random_box(rng), int(rng.integers(n_images))) for _ in range(n_gts)]
    n_dets = int(rng.integers(0, max_dets + 1))
    distinct = rng.uniform(0, 1, size=int(rng.integers(1, 5))) if rng.random() < 0.5 else None
    dets = []
    for _ in range(n_dets):
        if rng.random() < 0.6:
            g = gts[int(rng.integers(n_gts))]
            box, image = random_box(rng, g.box), g.image_id
        else:
            box, image = random_box(rng), int(rng.integers(n_images))
        score = float(rng.choice(distinct)) if distinct is not None else float(rng.uniform())
        dets.append(Detection(box, score, image))
    return dets, gts


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from reidrank import EmbeddingSet


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_embedding_set(rng, n, dim, tag="fixture", labels=None, cameras=None):
    vectors = rng.standard_normal((n, dim)).astype(np.float32)
    return EmbeddingSet.from_arrays(
        tag,
        vectors,
        person_labels=labels,
        camera_ids=cameras,
        record_ids=range(n),
    )

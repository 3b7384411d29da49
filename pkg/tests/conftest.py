import numpy as np
import pytest

from ext.cache_manager import CacheManager
from helpers import write_csv, write_jsonl, write_manifest


@pytest.fixture(autouse=True)
def fresh_cache():
    CacheManager().clear()
    yield
    CacheManager().clear()


@pytest.fixture
def tabular_manifest(tmp_path):
    """400 rows, three correlated numeric features, balanced binary label"""
    rng = np.random.default_rng(7)
    n = 400
    base = rng.normal(size=n)
    x1 = base + rng.normal(scale=0.5, size=n)
    x2 = 2.0 * base + rng.normal(scale=0.5, size=n)
    x3 = rng.normal(loc=10.0, scale=3.0, size=n)
    labels = ['yes' if i % 2 else 'no' for i in range(n)]
    rows = [[f"{a:.6f}", f"{b:.6f}", f"{c:.6f}", y] for a, b, c, y in zip(x1, x2, x3, labels)]
    write_csv(tmp_path / 'tabular.csv', ['x1', 'x2', 'x3', 'label'], rows)
    return write_manifest(tmp_path, 'tabular', 'tabular.csv', 'csv', 'classification', 'label',
                          description="synthetic correlated features", tags={'domain': 'synthetic'})


@pytest.fixture
def clusters_manifest(tmp_path):
    """Two Gaussian clusters whose means are 6 standard deviations apart"""
    rng = np.random.default_rng(11)
    rows = []
    for i in range(200):
        label = 'a' if i % 2 == 0 else 'b'
        center = -3.0 if label == 'a' else 3.0
        x = rng.normal(loc=center, scale=1.0, size=2)
        rows.append([f"{x[0]:.6f}", f"{x[1]:.6f}", label])
    write_csv(tmp_path / 'clusters.csv', ['u', 'v', 'cls'], rows)
    return write_manifest(tmp_path, 'clusters', 'clusters.csv', 'csv', 'classification', 'cls',
                          tags={'domain': 'clusters'})


@pytest.fixture
def text_manifest(tmp_path):
    """120 short reviews with a positive/negative label"""
    rng = np.random.default_rng(3)
    good = ['great', 'wonderful', 'moving', 'brilliant', 'funny', 'sharp']
    bad = ['boring', 'awful', 'dull', 'clumsy', 'tedious', 'flat']
    records = []
    for i in range(120):
        positive = i % 2 == 0
        words = rng.choice(good if positive else bad, size=4)
        records.append({'review': f"the film was {' and '.join(words)}",
                        'sentiment': 'positive' if positive else 'negative'})
    write_jsonl(tmp_path / 'reviews.jsonl', records)
    return write_manifest(tmp_path, 'reviews', 'reviews.jsonl', 'jsonl', 'classification', 'sentiment',
                          text_field='review', label_space=['positive', 'negative'])


@pytest.fixture
def regression_manifest(tmp_path):
    rng = np.random.default_rng(5)
    rows = []
    for _ in range(120):
        a, b = rng.normal(size=2)
        rows.append([f"{a:.6f}", f"{b:.6f}", f"{2 * a - b + rng.normal(scale=0.1):.6f}"])
    write_csv(tmp_path / 'regress.csv', ['a', 'b', 'target'], rows)
    return write_manifest(tmp_path, 'regress', 'regress.csv', 'csv', 'regression', 'target')

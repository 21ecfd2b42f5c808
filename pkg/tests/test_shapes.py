import numpy as np
import pytest

from oracles import classify_silhouette, silhouette
from randconv.rng import derive_stream
from randconv.shapes import CLASSES, DOMAINS, ShapeDatasetSpec, generate_dataset, sample_geometry


def test_counts_and_balance():
    ds = generate_dataset(ShapeDatasetSpec(per_class=5))
    assert len(ds) == 20
    assert np.bincount(ds.labels).tolist() == [5, 5, 5, 5]
    assert ds.num_classes == 4 and ds.domain_tag == "flat"


def test_deterministic():
    a = generate_dataset(ShapeDatasetSpec(per_class=3, domain="noise", seed=9))
    b = generate_dataset(ShapeDatasetSpec(per_class=3, domain="noise", seed=9))
    assert all(np.array_equal(x.array, y.array) for x, y in zip(a.images, b.images))
    c = generate_dataset(ShapeDatasetSpec(per_class=3, domain="noise", seed=10))
    assert not np.array_equal(a.images[0].array, c.images[0].array)


def test_invalid_domain():
    with pytest.raises(ValueError):
        ShapeDatasetSpec(domain="plaid")
    with pytest.raises(ValueError):
        ShapeDatasetSpec(classes=("square", "hexagon"))


def test_values_in_unit_range():
    for d in DOMAINS:
        ds = generate_dataset(ShapeDatasetSpec(per_class=4, domain=d))
        for img in ds.images:
            assert img.array.min() >= 0 and img.array.max() <= 1


def test_inverted_swaps_flat_colors():
    flat = generate_dataset(ShapeDatasetSpec(per_class=2, domain="flat", seed=3))
    inv = generate_dataset(ShapeDatasetSpec(per_class=2, domain="inverted", seed=3))
    for a, b in zip(flat.images, inv.images):
        corner_a, corner_b = a.array[0, 0], b.array[0, 0]
        centre_a = a.array[a.height // 2, a.width // 2]
        centre_b = b.array[b.height // 2, b.width // 2]
        np.testing.assert_array_equal(corner_a, centre_b)
        np.testing.assert_array_equal(centre_a, corner_b)


@pytest.mark.parametrize("size", [32, 64])
def test_shape_area_fraction(size):
    for kind in CLASSES:
        for i in range(200):
            frac = sample_geometry(kind, size, derive_stream(0, i)).mean()
            assert 0.3 <= frac <= 0.7, (kind, frac)


@pytest.mark.parametrize("domain", DOMAINS)
def test_labels_recoverable_from_silhouette(domain):
    ds = generate_dataset(ShapeDatasetSpec(per_class=250, domain=domain, seed=21))
    pred = np.array([classify_silhouette(silhouette(img.array)) for img in ds.images])
    assert np.mean(pred == ds.labels) >= 0.99

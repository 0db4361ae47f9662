import numpy as np
import pytest

from occreid.rng import SplitMix64, derive_seed


def test_same_seed_same_stream():
    a = SplitMix64(123)
    b = SplitMix64(123)
    assert [a.next_u64() for _ in range(50)] == [b.next_u64() for _ in range(50)]


def test_known_stream_frozen():
    # first outputs of the generator are pinned so a silent algorithm change
    # (which would break cross-run reproducibility of artifacts) is caught
    g = SplitMix64(0)
    assert [g.next_u64() for _ in range(3)] == [
        16294208416658607535,
        7960286522194355700,
        487617019471545679,
    ]


def test_derive_seed_independent_of_state():
    g = SplitMix64(9)
    before = derive_seed(g.seed, 4)
    g.next_u64()
    assert derive_seed(g.seed, 4) == before
    assert g.spawn(4).seed == before


def test_derive_seed_distinct_indices():
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000


def test_uniform_range_and_mean():
    g = SplitMix64(5)
    vals = [g.uniform() for _ in range(20000)]
    assert all(0.0 <= v < 1.0 for v in vals)
    assert abs(np.mean(vals) - 0.5) < 0.01


def test_randint_bounds_and_coverage():
    g = SplitMix64(17)
    draws = [g.randint(3, 7) for _ in range(5000)]
    assert set(draws) == {3, 4, 5, 6, 7}
    counts = np.bincount(draws)[3:]
    assert counts.min() > 800  # roughly uniform over 5 buckets of 1000

def test_randint_single_value_consumes_nothing():
    g = SplitMix64(2)
    state_draws = [g.randint(4, 4) for _ in range(10)]
    assert state_draws == [4] * 10
    h = SplitMix64(2)
    assert g.next_u64() == h.next_u64()


def test_randint_empty_range():
    with pytest.raises(ValueError):
        SplitMix64(0).randint(5, 4)


def test_shuffle_is_permutation():
    g = SplitMix64(31)
    items = list(range(40))
    shuffled = items[:]
    g.shuffle(shuffled)
    assert sorted(shuffled) == items
    assert shuffled != items


def test_sample_without_replacement():
    g = SplitMix64(8)
    picked = g.sample(range(30), 10)
    assert len(picked) == len(set(picked)) == 10
    assert all(0 <= p < 30 for p in picked)
    with pytest.raises(ValueError):
        g.sample(range(3), 4)


def test_spawn_streams_do_not_collide():
    g = SplitMix64(99)
    a, b = g.spawn(0), g.spawn(1)
    assert [a.next_u64() for _ in range(10)] != [b.next_u64() for _ in range(10)]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycflow.errors import DatasetFormatError, InvalidInstanceError, InvalidTourError
from cycflow.instances import (
    Instance,
    dumps_dataset,
    fingerprint,
    gap_percent,
    gen_uniform,
    loads_dataset,
    make_tour,
    read_dataset,
    tour_length,
    write_dataset,
)

SQUARE = Instance([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_gen_shape_and_range():
    ds = gen_uniform(3, 1, seed=0)
    assert len(ds) == 1
    pts = ds.records[0].instance.points
    assert pts.shape == (3, 2)
    assert np.all((pts >= 0.0) & (pts <= 1.0))


def test_gen_deterministic():
    a = gen_uniform(12, 7, seed=42)
    b = gen_uniform(12, 7, seed=42)
    assert dumps_dataset(a) == dumps_dataset(b)
    assert fingerprint(a) == fingerprint(b)


def test_gen_coordinate_mean():
    ds = gen_uniform(50, 1280, seed=7)
    coords = np.concatenate([r.instance.points for r in ds.records])
    assert np.all(np.abs(coords.mean(axis=0) - 0.5) <= 0.02)


def test_gen_rejects_small_n():
    with pytest.raises(InvalidInstanceError):
        gen_uniform(2, 1, seed=0)


def test_tour_length_square_perimeter():
    assert tour_length(SQUARE, [0, 1, 2, 3]) == pytest.approx(4.0, abs=1e-12)


def test_tour_length_square_crossing():
    expected = 2.0 + 2.0 * math.sqrt(2.0)
    assert tour_length(SQUARE, [0, 2, 1, 3]) == pytest.approx(expected, abs=1e-12)


def test_tour_length_rejects_non_permutation():
    with pytest.raises(InvalidTourError):
        tour_length(SQUARE, [0, 1, 2, 2])


@given(st.integers(0, 10_000), st.integers(4, 7), st.integers(0, 6), st.booleans())
@settings(max_examples=60, deadline=None)
def test_tour_length_cycle_invariance(seed, n, shift, flip):
    inst = gen_uniform(n, 1, seed=seed).records[0].instance
    order = np.random.default_rng(seed).permutation(n)
    variant = np.roll(order, shift % n)
    if flip:
        variant = variant[::-1]
    assert tour_length(inst, variant) == pytest.approx(tour_length(inst, order), abs=1e-12)


def test_gap_values():
    assert gap_percent(4.0, 4.0) == 0.0
    assert gap_percent(4.2, 4.0) == pytest.approx(5.0, abs=1e-12)
    crossing = 2.0 + 2.0 * math.sqrt(2.0)
    assert gap_percent(crossing, 4.0) == pytest.approx(20.7106781, abs=1e-6)


@given(st.floats(0.1, 100.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
@settings(max_examples=60)
def test_gap_monotone(l_opt, a, b):
    lo, hi = sorted((l_opt + a, l_opt + b))
    assert gap_percent(lo, l_opt) <= gap_percent(hi, l_opt)


def test_gap_rejects_nonpositive_reference():
    with pytest.raises(ValueError):
        gap_percent(1.0, 0.0)


def test_dataset_roundtrip_is_identity(tmp_path):
    ds = gen_uniform(10, 5, seed=1)
    path = tmp_path / "d.txt"
    write_dataset(ds, path)
    again = read_dataset(path)
    assert dumps_dataset(again) == dumps_dataset(ds)
    write_dataset(again, tmp_path / "d2.txt")
    assert (tmp_path / "d.txt").read_bytes() == (tmp_path / "d2.txt").read_bytes()


def test_dataset_roundtrip_preserves_tours(tmp_path):
    ds = gen_uniform(5, 3, seed=2)
    for rec in ds.records:
        rec.tour = make_tour(rec.instance, np.arange(5), "heuristic")
    path = tmp_path / "d.txt"
    write_dataset(ds, path)
    again = read_dataset(path)
    for orig, back in zip(ds.records, again.records):
        assert back.tour is not None
        assert back.tour.provenance == "heuristic"
        assert np.array_equal(back.tour.order, orig.tour.order)
        assert back.tour.length == orig.tour.length
    assert dumps_dataset(again) == dumps_dataset(ds)


def test_duplicated_tour_index_is_parse_error():
    ds = gen_uniform(4, 1, seed=3)
    ds.records[0].tour = make_tour(ds.records[0].instance, np.arange(4), "exact")
    text = dumps_dataset(ds)
    lines = text.splitlines()
    toks = lines[-1].split()
    toks[3:] = ["0", "1", "2", "2"]
    lines[-1] = " ".join(toks)
    with pytest.raises(DatasetFormatError, match="record 0"):
        loads_dataset("\n".join(lines) + "\n")


def test_malformed_coordinate_names_line():
    text = "cycflow-dataset v1\ninstance 0 3\n0.1 0.2\nnot-a-number 0.4\n0.5 0.6\n"
    with pytest.raises(DatasetFormatError) as exc:
        loads_dataset(text)
    assert exc.value.line == 4


def test_bad_header_rejected():
    with pytest.raises(DatasetFormatError):
        loads_dataset("something else\n")


def test_stored_length_must_match():
    ds = gen_uniform(4, 1, seed=4)
    ds.records[0].tour = make_tour(ds.records[0].instance, np.arange(4), "exact")
    text = dumps_dataset(ds)
    lines = text.splitlines()
    toks = lines[-1].split()
    toks[2] = "99.0"
    lines[-1] = " ".join(toks)
    with pytest.raises(DatasetFormatError, match="does not match"):
        loads_dataset("\n".join(lines) + "\n")

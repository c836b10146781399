import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infometer.sources import (
    DatasetFormatError,
    gen_discrete_iid,
    gen_gaussian_pair,
    gen_identical,
    gen_independent,
    load_dataset,
    save_dataset,
)

GAUSS = {"id": "gaussian"}
UNI4 = {"id": "uniform_int", "low": 0, "high": 3}


def _bivariate_gaussian_mi_quadrature(rho):
    # log density ratio in closed form avoids underflow; integrate on a fine grid
    c = 1 - rho * rho
    g = np.linspace(-9, 9, 3601)
    x, y = np.meshgrid(g, g, indexing="ij")
    log_ratio = -0.5 * math.log(c) - (x * x - 2 * rho * x * y + y * y) / (2 * c) + (x * x + y * y) / 2
    pxy = np.exp(-(x * x - 2 * rho * x * y + y * y) / (2 * c)) / (2 * math.pi * math.sqrt(c))
    dx = g[1] - g[0]
    return float((pxy * log_ratio).sum() * dx * dx / math.log(2))


def test_independent_manifest_and_determinism():
    a = gen_independent(UNI4, 2, 2, 1, seed=7)
    assert a.manifest.analytic_mi_bits_per_element == 0.0
    assert a.x.shape == (1, 2, 2)
    b = gen_independent(GAUSS, 32, 32, 20, seed=1)
    c = gen_independent(GAUSS, 32, 32, 20, seed=1)
    assert b.equals(c)
    assert b.x.tobytes() == c.x.tobytes()
    assert not np.array_equal(b.x, b.y)


def test_independent_2000_samples():
    d = gen_independent(GAUSS, 32, 32, 2000, seed=1)
    assert len(d) == 2000
    assert d.manifest.analytic_mi_bits_per_element == 0


def test_identical_copies_and_entropy():
    d = gen_identical(UNI4, 8, 8, 5, seed=0)
    assert np.array_equal(d.x, d.y)
    assert d.manifest.analytic_mi_bits_per_element == 2.0
    b = gen_identical({"id": "bernoulli", "p": 0.5, "values": [0, 255]}, 8, 8, 5, seed=0)
    assert b.manifest.analytic_mi_bits_per_element == 1.0
    assert set(np.unique(b.x)) <= {0.0, 255.0}
    assert gen_identical(GAUSS, 4, 4, 2, 0).manifest.analytic_mi_bits_per_element is None


@pytest.mark.parametrize("rho", [0.5, 0.9])
def test_gaussian_pair_closed_form_matches_quadrature(rho):
    d = gen_gaussian_pair(rho, 2, 2, 1, seed=0)
    assert d.manifest.analytic_mi_bits_per_element == pytest.approx(
        _bivariate_gaussian_mi_quadrature(rho), abs=1e-6)


def test_gaussian_pair_frozen_values():
    # from the quadrature oracle above
    assert gen_gaussian_pair(0.0, 2, 2, 1, 0).manifest.analytic_mi_bits_per_element == 0.0
    assert gen_gaussian_pair(0.5, 2, 2, 1, 0).manifest.analytic_mi_bits_per_element == pytest.approx(0.207519, abs=1e-6)
    assert gen_gaussian_pair(0.9, 2, 2, 1, 0).manifest.analytic_mi_bits_per_element == pytest.approx(1.197964, abs=1e-6)


def test_gaussian_pair_sample_correlation():
    d = gen_gaussian_pair(0.6, 32, 32, 2000, seed=3)
    r = np.corrcoef(d.x.ravel(), d.y.ravel())[0, 1]
    assert abs(r - 0.6) <= 0.01


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_gaussian_pair_rejects_bad_rho(rho):
    with pytest.raises(ValueError):
        gen_gaussian_pair(rho, 2, 2, 1, 0)


def test_discrete_iid_entropies():
    assert gen_discrete_iid([0.25] * 4, 2, 2, 1, 0).manifest.analytic_entropy_bits_per_element == 2.0
    # -(0.5 log 0.5 + 2 * 0.25 log 0.25) = 0.5 + 1.0
    assert gen_discrete_iid([0.5, 0.25, 0.25], 2, 2, 1, 0).manifest.analytic_entropy_bits_per_element == 1.5
    assert gen_discrete_iid([1.0], 2, 2, 1, 0).manifest.analytic_entropy_bits_per_element == 0.0


def test_discrete_iid_frequencies_converge():
    pmf = [0.5, 0.25, 0.125, 0.125]
    d = gen_discrete_iid(pmf, 32, 32, 1000, seed=2)  # ~1.02e6 symbols
    freq = np.bincount(d.x.astype(int).ravel(), minlength=4) / d.x.size
    assert np.abs(freq - pmf).max() <= 0.005


@pytest.mark.parametrize("pmf", [[0.5, 0.4], [-0.1, 1.1], [], [1 / 300] * 300])
def test_discrete_iid_rejects_invalid_pmf(pmf):
    with pytest.raises(ValueError):
        gen_discrete_iid(pmf, 2, 2, 1, 0)


def test_unknown_marginal():
    with pytest.raises(ValueError):
        gen_independent({"id": "cauchy"}, 2, 2, 1, 0)
    with pytest.raises(ValueError):
        gen_identical("gaussian", 2, 2, 1, 0)


def test_generation_is_order_independent():
    full = gen_gaussian_pair(0.3, 4, 4, 10, seed=9)
    part = gen_gaussian_pair(0.3, 4, 4, 4, seed=9)
    assert np.array_equal(full.x[:4], part.x)
    assert np.array_equal(full.y[:4], part.y)


def test_round_trip(tmp_path):
    d = gen_gaussian_pair(0.6, 8, 6, 5, seed=1)
    save_dataset(d, tmp_path / "ds")
    e = load_dataset(tmp_path / "ds")
    assert e.equals(d)
    assert e.manifest.analytic_mi_bits_per_element == d.manifest.analytic_mi_bits_per_element
    assert e.dataset_id == d.dataset_id


def test_load_truncated_payload(tmp_path):
    d = gen_independent(GAUSS, 4, 4, 3, seed=0)
    path = save_dataset(d, tmp_path / "ds")
    raw = (path / "payload.bin").read_bytes()
    (path / "payload.bin").write_bytes(raw[:8] + raw[8:-4 - 16] + raw[-4:])
    with pytest.raises(DatasetFormatError, match="manifest shape"):
        load_dataset(path)


def test_load_detects_checksum(tmp_path):
    d = gen_independent(GAUSS, 4, 4, 3, seed=0)
    path = save_dataset(d, tmp_path / "ds")
    raw = bytearray((path / "payload.bin").read_bytes())
    raw[20] ^= 0xFF
    (path / "payload.bin").write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="checksum"):
        load_dataset(path)


def test_load_detects_manifest_shape_change(tmp_path):
    path = save_dataset(gen_independent(GAUSS, 4, 4, 3, seed=0), tmp_path / "ds")
    m = json.loads((path / "manifest.json").read_text())
    m["shape"] = [4, 5]
    (path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), h=st.integers(1, 6), w=st.integers(1, 6), n=st.integers(1, 4))
def test_determinism_and_shape_property(seed, h, w, n):
    for gen in (lambda: gen_independent(GAUSS, h, w, n, seed),
                lambda: gen_identical(UNI4, h, w, n, seed),
                lambda: gen_gaussian_pair(0.4, h, w, n, seed),
                lambda: gen_discrete_iid([0.2, 0.8], h, w, n, seed)):
        a, b = gen(), gen()
        assert a.equals(b)
        assert a.x.shape == (n, h, w) == a.y.shape
        assert all(a.sample(i).x.shape == (1, h, w) for i in range(n))

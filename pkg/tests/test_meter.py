import json
import math
import warnings

import numpy as np
import pytest

from infometer.entropy import EntropyEstimate, TrainConfig, train_branch
from infometer.meter import (
    InfoMeterConfig,
    MIEstimate,
    NegativeMIWarning,
    compare_runs,
    estimate_mi,
    fit_infometer,
    write_comparison_csv,
)
from infometer.sources import gen_gaussian_pair, gen_independent

SMALL = TrainConfig(epochs=1, levels=1)


def _rates(hx, hy, hxy, n=1024):
    return (EntropyEstimate.from_rate(hx, n), EntropyEstimate.from_rate(hy, n),
            EntropyEstimate.from_rate(hxy, 2 * n))


def test_published_row_arithmetic_is_exact():
    with pytest.warns(NegativeMIWarning):
        est = MIEstimate.from_entropies(*_rates(6.0, 5.8, 6.1))
    assert est.i_paper_convention == 5.7
    # totals: 6.0N + 5.8N - 6.1 * 2N
    assert est.i_bits_per_x_element == pytest.approx(-0.4, abs=1e-12)
    assert est.negative


def test_totals_arithmetic():
    est = MIEstimate.from_entropies(EntropyEstimate.from_total(2, 1), EntropyEstimate.from_total(2, 1),
                                    EntropyEstimate.from_total(3, 2))
    assert est.i_total_bits == 1.0
    assert est.i_bits_per_x_element == 1.0
    assert est.i_total_bits == math.fsum([est.h_x.total_bits, est.h_y.total_bits, -est.h_xy.total_bits])


def test_negative_estimate_warns_and_is_not_clipped():
    with pytest.warns(NegativeMIWarning):
        est = MIEstimate.from_entropies(EntropyEstimate.from_total(1, 1), EntropyEstimate.from_total(1, 1),
                                        EntropyEstimate.from_total(2.5, 2))
    assert est.i_total_bits == -0.5
    assert est.to_json()["negative_bias_warning"] is True
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        MIEstimate.from_entropies(*_rates(6.0, 5.8, 6.1), warn=False)


def test_json_round_trip():
    est = MIEstimate.from_entropies(*_rates(6.0, 5.8, 6.1), concat_mode="tile", dataset_id="abc", warn=False)
    again = MIEstimate.from_json(json.loads(json.dumps(est.to_json())))
    assert again == est


def test_compare_runs_orders_table_rows(tmp_path):
    low = MIEstimate.from_entropies(*_rates(6.0, 5.8, 6.1), warn=False)
    high = MIEstimate.from_entropies(*_rates(5.6, 5.8, 6.5), warn=False)
    rows = compare_runs([("low clutter", low), ("high clutter", high)], "i_paper_convention")
    assert [r["label"] for r in rows] == ["high clutter", "low clutter"]
    assert rows[0]["mi"] == pytest.approx(4.9, abs=1e-12)
    assert rows[1]["delta_prev"] == pytest.approx(0.8, abs=1e-12)
    write_comparison_csv(rows, tmp_path / "cmp.csv")
    assert (tmp_path / "cmp.csv").read_text().splitlines()[0].startswith("label,convention,mi")


def test_compare_runs_edge_cases():
    a = MIEstimate.from_entropies(*_rates(6.0, 5.8, 6.1), warn=False)
    rows = compare_runs([("a", a), ("b", a)], "i_paper_convention")
    assert rows[1]["delta_prev"] == 0.0 and rows[1]["delta_min"] == 0.0
    with pytest.raises(ValueError, match="at least two"):
        compare_runs([("a", a)])
    with pytest.raises(ValueError, match="mixed"):
        compare_runs([("a", a), ("b", a)], ["i_total_bits", "i_paper_convention"])
    rows = compare_runs([("a", a), ("b", a)], ["i_total_bits", "i_paper_convention"], allow_mixed=True)
    assert {r["convention"] for r in rows} == {"i_total_bits", "i_paper_convention"}
    with pytest.raises(ValueError):
        compare_runs([("a", a), ("b", a)], "nats")


def test_config_validation_and_profile():
    assert InfoMeterConfig().concat_mode == "quilt"
    assert InfoMeterConfig.paper_profile().concat_mode == "tile"
    with pytest.raises(ValueError):
        InfoMeterConfig("shuffle").validate()


def test_fit_is_deterministic_and_branches_are_isolated():
    ds = gen_gaussian_pair(0.6, 8, 8, 16, seed=0)
    cfg = InfoMeterConfig(train=SMALL)
    a = fit_infometer(ds, cfg)
    b = fit_infometer(ds, cfg)
    for ba, bb in zip(a, b):
        pa, pb = ba.parameters_dict(), bb.parameters_dict()
        assert all(np.array_equal(pa[k], pb[k]) for k in pa)
    assert estimate_mi(a, ds, warn=False) == estimate_mi(b, ds, warn=False)
    # retraining only the joint branch with another concat mode leaves x and y alone
    tiled = train_branch(ds, "joint", SMALL, concat_mode="tile", stats=a.joint.records)
    assert tiled.map_shape == (8, 16)
    est = estimate_mi(type(a)(a.x, a.y, tiled), ds, warn=False)
    assert est.h_x == estimate_mi(a, ds, warn=False).h_x
    assert est.concat_mode == "tile"


def test_estimate_rejects_mismatched_stats():
    ds = gen_independent({"id": "gaussian"}, 8, 8, 8, seed=0)
    br = fit_infometer(ds, InfoMeterConfig(train=TrainConfig(epochs=0, levels=1)))
    other = train_branch(ds, "joint", TrainConfig(epochs=0, levels=1), concat_mode="quilt",
                         stats={"x": (-100.0, 100.0), "y": (-100.0, 100.0)})
    with pytest.raises(ValueError, match="rescaling"):
        estimate_mi(type(br)(br.x, br.y, other), ds)


def test_paper_shape_joint_map():
    ds = gen_independent({"id": "gaussian"}, 600, 256, 1, seed=0)
    b = train_branch(ds, "joint", TrainConfig(epochs=0), concat_mode="tile")
    assert b.map_shape == (600, 512)

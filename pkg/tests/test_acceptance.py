"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible even
without ``-s``) before asserting. Criteria 3, 4, 5 and 7 train full
three-branch estimators at desk scale and take several minutes each on one CPU.
"""

import json
import math
import time

import numpy as np
import pytest
import torch

from infometer import cli
from infometer.adapt import concat, split_joint
from infometer.entropy import ARContextModel, FactorizedModel, TrainConfig, estimate_entropy, train_branch
from infometer.harness import add_noise_snr
from infometer.meter import estimate_mi, fit_infometer
from infometer.oracles import binned_mi, gaussian_analytic_mi, histogram_mi, ksg_mi
from infometer.sources import gen_discrete_iid, gen_gaussian_pair, gen_identical, gen_independent
from infometer.transform import LiftingTransform, forward, inverse

GAUSS = {"id": "gaussian"}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


def test_criterion_01_invertibility(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    bad = 0
    for _ in range(1000):
        shape = (int(rng.integers(0, 4)), 2, 3)
        t = LiftingTransform(shape[0], 3, rng.normal(scale=2, size=shape), rng.normal(scale=2, size=shape))
        m = rng.integers(0, 256, (32, 32))
        bad += not np.array_equal(inverse(t, forward(t, m)), m)
        y = rng.integers(0, 256, (32, 32))
        for mode in ("tile", "quilt"):
            rx, ry = split_joint(concat(m, y, mode))
            bad += not (np.array_equal(rx, m) and np.array_equal(ry, y))
    secs = time.perf_counter() - t0
    report(1, bad == 0 and secs <= 60, f"1000 maps, {bad} mismatches, {secs:.1f}s")


def test_criterion_02_entropy_oracle(report):
    t0 = time.perf_counter()
    ds = gen_discrete_iid([0.25] * 4, 32, 32, 100, seed=102)  # 102400 symbols
    branch = train_branch(ds, "x", TrainConfig(density="factorized", levels=0))
    h = estimate_entropy(branch, ds).bits_per_element
    secs = time.perf_counter() - t0
    report(2, 1.95 <= h <= 2.10 and secs <= 600, f"H = {h:.4f} bits/element (analytic 2.0), {secs:.0f}s")


@pytest.mark.slow
def test_criterion_03_independence(report):
    t0 = time.perf_counter()
    ds = gen_independent(GAUSS, 32, 32, 2000, seed=103)
    est = estimate_mi(fit_infometer(ds), ds, warn=False)
    secs = time.perf_counter() - t0
    i = est.i_bits_per_x_element
    report(3, abs(i) <= 0.1 and secs <= 1800, f"I = {i:+.5f} bits per x element, {secs:.0f}s")


@pytest.mark.slow
def test_criterion_04_identical_sources(report):
    t0 = time.perf_counter()
    ds = gen_identical(GAUSS, 32, 32, 2000, seed=104)
    est = estimate_mi(fit_infometer(ds), ds, warn=False)
    secs = time.perf_counter() - t0
    ratio = est.i_total_bits / est.h_x.total_bits
    report(4, ratio >= 0.9 and secs <= 1800,
           f"I_total / H(X)_total = {ratio:.4f} (H(X) {est.h_x.bits_per_element:.3f}, "
           f"H(X,Y) {est.h_xy.bits_per_element:.3f} bits/element), {secs:.0f}s")


@pytest.mark.slow
def test_criterion_05_gaussian_sweep(report):
    rhos = (0.0, 0.3, 0.6, 0.9)
    got, ok = [], True
    for rho in rhos:
        ds = gen_gaussian_pair(rho, 32, 32, 500, seed=105)
        i = estimate_mi(fit_infometer(ds), ds, warn=False).i_bits_per_x_element
        ref = gaussian_analytic_mi(rho)
        ok &= abs(i - ref) <= max(0.1, 0.2 * ref)
        got.append(i)
    ok &= all(b > a for a, b in zip(got, got[1:]))
    detail = ", ".join(f"rho {r}: {i:.4f} vs {gaussian_analytic_mi(r):.4f}" for r, i in zip(rhos, got))
    report(5, ok, detail)


def test_criterion_06_oracle_equivalence(report):
    counts = [[3, 1], [1, 3]]
    n = 8
    brute = math.fsum(
        (c / n) * math.log2((c / n) / ((sum(counts[i]) / n) * (sum(r[j] for r in counts) / n)))
        for i, row in enumerate(counts) for j, c in enumerate(row)
    )
    table = histogram_mi(counts)
    rng = np.random.default_rng(106)
    x = rng.standard_normal(5000)
    y = 0.6 * x + 0.8 * rng.standard_normal(5000)
    k = ksg_mi(x, y, k=3)
    ok = abs(table - brute) <= 1e-12 and abs(k - 0.3219) <= 0.05
    report(6, ok, f"table {table!r} vs brute force {brute!r}; KSG {k:.4f} vs 0.3219")


@pytest.mark.slow
def test_criterion_07_snr_direction(report):
    base = gen_gaussian_pair(0.8, 32, 32, 2000, seed=107)
    est, orc, snr = {}, {}, {}
    for target in (21.4, 28.1):
        ds = add_noise_snr(base, target, "both", seed=7)
        est[target] = estimate_mi(fit_infometer(ds), ds, warn=False).i_bits_per_x_element
        orc[target] = binned_mi(ds.x, ds.y, 16)
        snr[target] = ds.manifest.extra["perturbations"][-1]["achieved_snr_db"]
    d_est = est[28.1] - est[21.4]
    d_orc = orc[28.1] - orc[21.4]
    snr_ok = all(abs(v - t) <= 0.5 for t, a in snr.items() for v in a.values())
    ok = np.sign(d_est) == np.sign(d_orc) and d_orc != 0 and snr_ok
    report(7, ok, f"delta estimate {d_est:+.5f}, delta oracle {d_orc:+.5f}, achieved SNR {snr}")


def test_criterion_08_published_arithmetic(report, tmp_path, capsys):
    out = tmp_path / "table.json"
    code = cli.main(["estimate", "--from-entropies", "6.0", "5.8", "6.1", "-o", str(out)])
    capsys.readouterr()
    mi = json.loads(out.read_text())["mi"]
    ok = code == 0 and mi["i_paper_convention"] == 5.7
    report(8, ok, f"6.0 + 5.8 - 6.1 -> {mi['i_paper_convention']!r}")


def _fd_rel_error(fn, tensors, analytic, h=1e-6):
    numeric = []
    for t in tensors:
        flat = t.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = fn().item()
            flat[i] = old - h
            down = fn().item()
            flat[i] = old
            numeric.append((up - down) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    return float((analytic - numeric).norm() / numeric.norm())


def test_criterion_09_gradient_checks(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(109)
    worst = {"transform": 0.0, "factorized": 0.0, "ar": 0.0}
    for _ in range(20):
        shape = (2, 2, 3)
        t = LiftingTransform(2, 3, rng.normal(scale=0.5, size=shape), rng.normal(scale=0.5, size=shape))
        x = torch.tensor(rng.uniform(0, 255, (8, 8)), requires_grad=True)
        w = torch.tensor(rng.normal(size=(8, 8)))
        loss = lambda: (t(x) * w).sum()
        loss().backward()
        g = torch.cat([t.predict.grad.ravel(), t.update.grad.ravel(), x.grad.ravel()])
        worst["transform"] = max(worst["transform"],
                                 _fd_rel_error(lambda: loss().detach(), [t.predict, t.update, x.detach()], g, 1e-4))

        f = FactorizedModel(np.arange(4).reshape(2, 2) % 2, 2, v_min=0, v_max=12)
        with torch.no_grad():
            f.logits.copy_(torch.from_numpy(rng.normal(size=f.logits.shape)))
        y = torch.tensor(rng.integers(0, 12, (2, 2)) + rng.uniform(0.05, 0.95, (2, 2)), requires_grad=True)
        wf = torch.tensor(rng.normal(size=(2, 2)))
        lf = lambda: (f.log2_likelihood(y) * wf).sum()
        lf().backward()
        worst["factorized"] = max(worst["factorized"], _fd_rel_error(
            lambda: lf().detach(), [f.logits, y.detach()], torch.cat([f.logits.grad.ravel(), y.grad.ravel()])))

        a = ARContextModel(np.arange(16).reshape(4, 4) % 2, 2, v_min=-20, v_max=60)
        with torch.no_grad():
            a.weight.copy_(torch.from_numpy(rng.normal(scale=0.3, size=a.weight.shape)))
            a.bias.copy_(torch.from_numpy(rng.uniform(0, 40, size=2)))
            a.scale_raw.copy_(torch.from_numpy(rng.uniform(0.5, 4, size=2)))
        z = torch.tensor(rng.uniform(0, 40, (4, 4)), requires_grad=True)
        wa = torch.tensor(rng.normal(size=(4, 4)))
        la = lambda: (a.log2_likelihood(z) * wa).sum()
        la().backward()
        params = [a.weight, a.bias, a.scale_raw]
        ga = torch.cat([p.grad.ravel() for p in params] + [z.grad.ravel()])
        worst["ar"] = max(worst["ar"], _fd_rel_error(lambda: la().detach(), params + [z.detach()], ga))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and secs <= 60
    report(9, ok, "worst relative error " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
           + f" over 20 instances each, {secs:.1f}s")


def test_criterion_10_determinism(report, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "version": 1,
        "generator": {"id": "gaussian_pair", "params": {"rho": 0.6}, "shape": [16, 16], "n_samples": 64},
        "training": {"epochs": 3},
    }))
    run = lambda *a: cli.main(["--config", str(cfg), "--seed", "110", *map(str, a)])
    codes = [run("generate", "-o", tmp_path / "ds")]
    for name in ("a", "b"):
        codes.append(run("train", "--dataset", tmp_path / "ds", "-o", tmp_path / name))
        codes.append(run("estimate", "--checkpoints", tmp_path / name, "--dataset", tmp_path / "ds",
                         "-o", tmp_path / f"{name}.json"))
    capsys.readouterr()
    same_report = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    files = [f"{sub}/{f}" for sub in ("branch_x", "branch_y", "branch_joint")
             for f in ("manifest.json", "payload.bin")]
    same_ckpt = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    ok = codes == [0] * 5 and same_report and same_ckpt
    report(10, ok, f"exit codes {codes}, reports identical {same_report}, checkpoints identical {same_ckpt}")

# %% [markdown]
# # Perturbations and a small benchmark
#
# Additive noise at a fixed SNR lowers the dependence between two sources.
# The benchmark compares the learned estimate with a binned plug-in oracle
# and checks that both move in the same direction.

# %%
from infometer.entropy import TrainConfig
from infometer.harness import BenchmarkConfig, Condition, PerturbationSpec, run_benchmark
from infometer.meter import InfoMeterConfig

noise = lambda snr: [PerturbationSpec("noise_snr", {"snr_db": snr}, "both", seed=7)]
config = BenchmarkConfig(
    source={"id": "gaussian_pair", "params": {"rho": 0.8}, "shape": [32, 32], "n_samples": 300, "seed": 6},
    conditions=[Condition("snr 5", noise(5.0)), Condition("snr 21.4", noise(21.4)), Condition("snr 28.1", noise(28.1))],
    estimator=InfoMeterConfig(train=TrainConfig(epochs=3)),
)
report = run_benchmark(config)

# %%
for c in report.conditions:
    snr = c["dataset_extra"]["perturbations"][-1]["achieved_snr_db"]
    print(f"{c['label']:>9}: estimate {c['mi']['i_bits_per_x_element']:.4f}  oracle {c['oracle_mi']:.4f}  "
          f"achieved SNR x {snr['x']:.2f} dB")

# %%
for p in report.pairs:
    print(p["a"], "->", p["b"], "signs agree:", p["sign_agree"])

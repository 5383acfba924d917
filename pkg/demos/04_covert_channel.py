"""Simulated timing covert channel: how many bits per symbol survive the noise?

Run with ``python3 demos/04_covert_channel.py``.
"""
import numpy as np

from jccscan.covert import ChannelConfig, TimingModel, expected_error_rate, fit_sigma, sweep

# %% A symbol is a 256-bit word whose Hamming weight sets how many loop iterations
# take the slow path.  Fit the noise so 5-bit symbols fail about 4.5% of the time.
quiet = TimingModel(base_cycles=983, cycles_per_slow_iter=1, noise_sigma=0)
sigma = fit_sigma(ChannelConfig(5), quiet, 0.0454)
model = TimingModel(983, 1, sigma)
print(f"fitted noise sigma: {sigma:.2f} cycles")

# %% Monte Carlo against the closed form, k = 1..8.
print("bits  simulated  analytic   Mbps")
for r in sweep(model, trials=10_000, seed=7):
    analytic = expected_error_rate(ChannelConfig(r.bits), model)
    print(f"{r.bits:4d}  {r.error_rate:9.4f}  {analytic:8.4f}  {r.throughput_bps / 1e6:6.2f}")

# %% Goodput: raw rate discounted by symbol errors.  More levels is not always better.
goodput = [(r.bits, r.throughput_bps * (1 - r.error_rate) / 1e6) for r in sweep(model, 10_000, 7)]
best = max(goodput, key=lambda t: t[1])
print(f"best goodput at {best[0]} bits/symbol: {best[1]:.2f} Mbps")
print("levels for k=3:", np.array(ChannelConfig(3).level_weights))

"""Simulation of a Hamming-weight timing covert channel.

The sender encodes a k-bit symbol as a secret word whose Hamming weight
selects the number of slow loop iterations.  Cycle counts follow a linear
model with additive Gaussian noise; the receiver decodes with the nearest
of per-symbol centroids learned in a calibration phase.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from typing import Optional

import numpy as np
from scipy import optimize, stats

WORD_LENGTH = 256
CPU_FREQ_HZ = 4.0e9


def level_weights(bits_per_symbol: int, word_length: int = WORD_LENGTH) -> list[int]:
    """Evenly spread Hamming weights from 0 to ``word_length`` (half rounds up)."""
    if not 1 <= bits_per_symbol <= 8:
        raise ValueError("bits_per_symbol must be in 1..8")
    steps = (1 << bits_per_symbol) - 1
    if steps > word_length:
        raise ValueError(f"{steps + 1} levels do not fit a {word_length}-bit word")
    return [floor(Fraction(i * word_length, steps) + Fraction(1, 2)) for i in range(steps + 1)]


@dataclass(frozen=True)
class ChannelConfig:
    bits_per_symbol: int = 1
    word_length: int = WORD_LENGTH
    level_weights: tuple = field(default=None)

    def __post_init__(self):
        if self.level_weights is None:
            object.__setattr__(self, "level_weights",
                               tuple(level_weights(self.bits_per_symbol, self.word_length)))
        w = self.level_weights
        if len(w) != 1 << self.bits_per_symbol:
            raise ValueError("need exactly 2**bits_per_symbol levels")
        if w[0] != 0 or w[-1] != self.word_length or any(a >= b for a, b in zip(w, w[1:])):
            raise ValueError("levels must rise strictly from 0 to word_length")

    @property
    def n_symbols(self) -> int:
        return 1 << self.bits_per_symbol


@dataclass(frozen=True)
class TimingModel:
    base_cycles: float = 983.0
    cycles_per_slow_iter: float = 1.0
    noise_sigma: float = 0.0
    cpu_freq_hz: float = CPU_FREQ_HZ

    def __post_init__(self):
        if self.base_cycles < 0 or self.cycles_per_slow_iter <= 0:
            raise ValueError("need base_cycles >= 0 and cycles_per_slow_iter > 0")
        if self.noise_sigma < 0 or self.cpu_freq_hz <= 0:
            raise ValueError("need noise_sigma >= 0 and cpu_freq_hz > 0")

    def mean_cycles(self, weight):
        return self.base_cycles + self.cycles_per_slow_iter * np.asarray(weight, dtype=float)


def _check_symbol(config: ChannelConfig, symbol: int):
    if not 0 <= symbol < config.n_symbols:
        raise ValueError(f"symbol {symbol} outside 0..{config.n_symbols - 1}")


def encode(config: ChannelConfig, symbol: int, seed: Optional[int] = None) -> np.ndarray:
    """Secret word (bool array) whose popcount is the symbol's level weight.

    Without a seed the set bits are the lowest indices; with one they are
    placed uniformly at random.
    """
    _check_symbol(config, symbol)
    weight = config.level_weights[symbol]
    word = np.zeros(config.word_length, dtype=bool)
    if seed is None:
        word[:weight] = True
    else:
        rng = np.random.default_rng(seed)
        word[rng.choice(config.word_length, size=weight, replace=False)] = True
    return word


def simulate_symbol(model: TimingModel, config: ChannelConfig, symbol: int,
                    seed: Optional[int] = None) -> float:
    """Cycle count for one transmission of *symbol*."""
    slow_count = int(np.count_nonzero(encode(config, symbol)))
    noise = np.random.default_rng(seed).normal(0.0, model.noise_sigma) if model.noise_sigma else 0.0
    return float(model.mean_cycles(slow_count) + noise)


def _sample(model: TimingModel, config: ChannelConfig, symbols: np.ndarray, rng) -> np.ndarray:
    weights = np.asarray(config.level_weights)[symbols]
    cycles = model.mean_cycles(weights)
    if model.noise_sigma:
        cycles = cycles + rng.normal(0.0, model.noise_sigma, size=cycles.shape)
    return cycles


def calibrate(model: TimingModel, config: ChannelConfig, samples_per_level: int = 100,
              seed: Optional[int] = 0) -> np.ndarray:
    """Receiver training: mean observed cycles for each symbol."""
    if samples_per_level < 1:
        raise ValueError("samples_per_level must be >= 1")
    rng = np.random.default_rng(seed)
    symbols = np.repeat(np.arange(config.n_symbols), samples_per_level)
    cycles = _sample(model, config, symbols, rng).reshape(config.n_symbols, samples_per_level)
    return cycles.mean(axis=1)


def decode(cycles, centroids) -> np.ndarray:
    """Nearest-centroid decision; ties go to the lower symbol."""
    cycles = np.atleast_1d(np.asarray(cycles, dtype=float))
    dist = np.abs(cycles[:, None] - np.asarray(centroids)[None, :])
    return np.argmin(dist, axis=1)  # argmin returns the first minimum


def throughput_bps(bits_per_symbol: int, mean_symbol_cycles: float, cpu_freq_hz: float = CPU_FREQ_HZ) -> float:
    return bits_per_symbol * cpu_freq_hz / mean_symbol_cycles


@dataclass(frozen=True)
class ChannelResult:
    bits: int
    trials: int
    sigma: float
    error_rate: float
    mean_symbol_cycles: float
    throughput_bps: float

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "trials": self.trials,
            "sigma": self.sigma,
            "error_rate": self.error_rate,
            "mean_cycles": self.mean_symbol_cycles,
            "throughput_bps": self.throughput_bps,
        }


def run_channel(config: ChannelConfig, model: TimingModel, trials: int = 10_000, seed: int = 0,
                samples_per_level: int = 100) -> ChannelResult:
    """Send *trials* uniformly drawn symbols and count decoding errors.

    Calibration and transmission draw from independent child streams of
    *seed*, so results are reproducible for a fixed seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    calib_seq, send_seq = np.random.SeedSequence(seed).spawn(2)
    centroids = calibrate(model, config, samples_per_level, calib_seq)
    rng = np.random.default_rng(send_seq)
    sent = rng.integers(0, config.n_symbols, size=trials)
    cycles = _sample(model, config, sent, rng)
    received = decode(cycles, centroids)
    mean_cycles = float(cycles.mean())
    return ChannelResult(
        bits=config.bits_per_symbol,
        trials=trials,
        sigma=model.noise_sigma,
        error_rate=float(np.mean(received != sent)),
        mean_symbol_cycles=mean_cycles,
        throughput_bps=throughput_bps(config.bits_per_symbol, mean_cycles, model.cpu_freq_hz),
    )


def expected_error_rate(config: ChannelConfig, model: TimingModel) -> float:
    """Closed-form symbol error rate with exact centroids and uniform symbols.

    Decision thresholds sit halfway between neighbouring level means.
    """
    means = model.mean_cycles(config.level_weights)
    if model.noise_sigma == 0:
        return 0.0
    half_gaps = np.diff(means) / 2.0
    upper = np.append(half_gaps, np.inf)   # distance to the next threshold above
    lower = np.insert(half_gaps, 0, np.inf)
    p_err = stats.norm.sf(upper / model.noise_sigma) + stats.norm.sf(lower / model.noise_sigma)
    return float(p_err.mean())


def fit_sigma(config: ChannelConfig, model: TimingModel, target_error: float) -> float:
    """Noise level at which :func:`expected_error_rate` equals *target_error*."""
    if not 0 < target_error < 1 - 1 / config.n_symbols:
        raise ValueError("target_error out of reachable range")

    def gap(log_sigma):
        m = TimingModel(model.base_cycles, model.cycles_per_slow_iter, float(np.exp(log_sigma)), model.cpu_freq_hz)
        return expected_error_rate(config, m) - target_error

    spread = model.cycles_per_slow_iter * config.word_length
    return float(np.exp(optimize.brentq(gap, np.log(spread * 1e-6), np.log(spread * 1e3), xtol=1e-12)))


def sweep(model: TimingModel, trials: int = 10_000, seed: int = 0,
          word_length: int = WORD_LENGTH) -> list[ChannelResult]:
    """Error rate and throughput for every capacity from 1 to 8 bits."""
    return [run_channel(ChannelConfig(k, word_length), model, trials, seed) for k in range(1, 9)]

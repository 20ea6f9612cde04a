"""Shared test utilities: tiny model factories and a finite-difference oracle."""

from __future__ import annotations

import numpy as np

from l3prune import ModelConfig, init
from l3prune import data as data_mod
from l3prune import numeric


def tiny_config(**overrides) -> ModelConfig:
    params = dict(
        vocab_size=64,
        d_model=16,
        n_layers=3,
        n_heads=2,
        d_ff=24,
        max_seq_len=24,
        seed=11,
    )
    params.update(overrides)
    return ModelConfig(**params)


def tiny_model(**overrides):
    return init(tiny_config(**overrides))


def tiny_tuples(count: int = 16, vocab_size: int = 64, seed: int = 5):
    spec = data_mod.SynthSpec(
        vocab_size=vocab_size, n_topics=3, tuple_count=count, noise_rate=0.1, seed=seed
    )
    return data_mod.synth_generate(spec)


def central_diff(f, flat: np.ndarray, index: int, h: float = 1e-5) -> float:
    """Symmetric difference of the scalar function ``f`` in one coordinate."""
    orig = flat[index]
    flat[index] = orig + h
    plus = f()
    flat[index] = orig - h
    minus = f()
    flat[index] = orig
    return (plus - minus) / (2.0 * h)


def gradcheck(
    loss_fn,
    params: list[numeric.Tensor],
    probes_per_param: int = 4,
    h: float = 1e-5,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central differences.

    Returns the worst relative error seen; asserts every probed coordinate
    satisfies |analytic - numeric| <= rtol * max(|analytic|, |numeric|) + atol.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = loss_fn()
    numeric.backward(loss)
    worst = 0.0
    for p in params:
        assert p.grad is not None, "gradient missing for a requires_grad tensor"
        assert p.grad.shape == p.data.shape
        flat = p.data.reshape(-1)
        grads = p.grad.reshape(-1)
        for _ in range(min(probes_per_param, flat.size)):
            i = int(rng.integers(flat.size))
            fd = central_diff(lambda: loss_fn().item(), flat, i, h=h)
            an = grads[i]
            err = abs(an - fd)
            bound = rtol * max(abs(an), abs(fd)) + atol
            assert err <= bound, f"grad mismatch at coord {i}: analytic={an} fd={fd}"
            denom = max(abs(an), abs(fd), 1e-12)
            worst = max(worst, err / denom)
    for p in params:
        p.requires_grad = False
        p.grad = None
    return worst

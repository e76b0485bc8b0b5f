import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kandos.data import SynthConfig, clean_apply, clean_fit, split, synth_generate  # noqa: E402
from kandos.model import KanConfig, backward, forward, init_model  # noqa: E402
from kandos.training import bce_loss  # noqa: E402

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_model(dims, seed, coeff_std=0.5):
    """A float64 model with every parameter randomised (not just the coefficients)."""
    rng = np.random.default_rng(seed)
    model = init_model(KanConfig(layer_dims=dims, seed=seed), dtype=np.float64)
    for layer in model.layers:
        layer.coeffs[...] = rng.normal(0, coeff_std, layer.coeffs.shape)
        layer.scale[...] = rng.uniform(0.5, 1.5, layer.scale.shape)
        layer.bias[...] = rng.normal(0, 0.3, layer.bias.shape)
    return model


def gradient_check(model, X, y, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    The denominator is floored at 1e-6: central differences at h = 1e-5 carry
    roundoff near 1e-11, so tinier entries are checked to 1e-10 absolute.
    """
    z, cache = forward(model, X)
    _, dz = bce_loss(z, y)
    analytic = backward(model, cache, dz).flat()
    worst = 0.0
    for p, g in zip(model.parameters(), analytic):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = bce_loss(forward(model, X)[0], y)[0]
            p[idx] = orig - h
            down = bce_loss(forward(model, X)[0], y)[0]
            p[idx] = orig
            num = (up - down) / (2 * h)
            a = g[idx]
            scale = max(abs(a), abs(num), 1e-6)
            worst = max(worst, abs(a - num) / scale)
    return worst


@pytest.fixture(scope="session")
def synth_small():
    ds = synth_generate(SynthConfig(samples_per_class=300, feature_count=12, class_separation=6.0,
                                    noise_feature_fraction=0.25, seed=5))
    tr, te = split(ds, 0.2, seed=1)
    stats = clean_fit(tr)
    return clean_apply(tr, stats), clean_apply(te, stats)

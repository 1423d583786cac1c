import numpy as np
import pytest
import torch

from isggen import dataio, trainer
from isggen.crn import CrnConfig
from isggen.gcn import GcnConfig

DESK_GCN = GcnConfig(embed_dim=32, num_layers=2, hidden_dim=64)
DESK_CRN = CrnConfig(
    start_resolution=4, output_resolution=64, channels=(32, 24, 16, 12), noise_channels=8
)


@pytest.fixture(scope="session")
def vocab():
    return dataio.synth_vocabulary()


@pytest.fixture(scope="session")
def desk_models(vocab):
    return trainer.build_models(vocab, DESK_GCN, DESK_CRN, seed=11)


@pytest.fixture
def desk_models_fresh(vocab):
    """Function-scoped copy for tests that mutate weights by training."""
    return trainer.build_models(vocab, DESK_GCN, DESK_CRN, seed=11)


@pytest.fixture(scope="session")
def desk_dataset(vocab):
    spec = dataio.DatasetSpec()
    samples = dataio.synth_shapes(6, 21, spec)
    return [dataio.example_from_graph(img, g, seed=3, spec=spec) for img, g in samples]


@pytest.fixture(scope="session")
def shapes_classifier():
    """Trained once per session; the gate inside raises if it underfits."""
    from isggen.metrics import train_shapes_classifier

    return train_shapes_classifier(seed=0)


def finite_difference_check(f, params, rel_tol=1e-3, eps=1e-5, max_entries=24, seed=0):
    """Compare analytic gradients of scalar f() against central differences.

    params: list of float64 tensors with requires_grad. A deterministic
    sample of entries per tensor keeps the check fast; the worst relative
    error over all sampled entries must stay within rel_tol.
    """
    value = f()
    grads = torch.autograd.grad(value, params, allow_unused=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        n = flat.numel()
        idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        for i in sorted(int(v) for v in idx):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
            plus = float(f().detach())
            with torch.no_grad():
                flat[i] = orig - eps
            minus = float(f().detach())
            with torch.no_grad():
                flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            analytic = float(g.reshape(-1)[i])
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst

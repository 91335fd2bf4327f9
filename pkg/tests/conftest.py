import pytest
import torch

from conceptex.corpus import EntityRecord


@pytest.fixture(autouse=True)
def _fixed_torch_threads():
    torch.set_num_threads(2)


@pytest.fixture
def alcott_record() -> EntityRecord:
    return EntityRecord(
        entity="Louisa May Alcott",
        abstract="Louisa May Alcott was a famous American writer and novelist of stories.",
        concepts=["writer"],
    )


def finite_difference_gradients(loss_fn, params, eps=1e-5):
    """Central-difference gradient of loss_fn w.r.t. every scalar in params."""
    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_gradient_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = a.detach().reshape(-1)
        n = n.detach().reshape(-1)
        diff = (a - n).abs()
        scale = torch.maximum(a.abs(), n.abs()).clamp_min(1e-6)
        worst = max(worst, float((diff / scale).max()))
    return worst

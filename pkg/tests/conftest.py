import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def torch_gen():
    g = torch.Generator()
    g.manual_seed(0)
    return g


def central_difference_gradient(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of a scalar function at ``x`` (mutated in place, restored)."""
    grad = torch.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn(x).item()
        flat[i] = orig - eps
        lo = fn(x).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def gradient_relative_error(fn, x: torch.Tensor, eps: float = 1e-6) -> float:
    """Relative error between autograd and central-difference gradients at ``x``."""
    leaf = x.detach().clone().requires_grad_(True)
    fn(leaf).backward()
    numeric = central_difference_gradient(fn, x.detach().clone(), eps)
    denom = max(leaf.grad.norm().item(), numeric.norm().item(), 1e-12)
    return (leaf.grad - numeric).norm().item() / denom

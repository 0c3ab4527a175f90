"""Central-difference checks of torch modules with respect to every parameter and input."""

import torch
from torch.func import functional_call

from fishcore.train import torch_grad_check


class _Wrapped(torch.nn.Module):
    def __init__(self, inner, forward):
        super().__init__()
        self.inner = inner
        self.call = forward

    def forward(self, *xs):
        return self.call(self.inner, *xs)


def randomize(module, seed=0, scale=0.5):
    """Double precision, random nonzero parameters (zero-initialized layers would hide bugs)."""
    g = torch.Generator().manual_seed(seed)
    module = module.double()
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def module_grad_error(module, *inputs, forward=None, seed=0, h=1e-5):
    """Worst relative gradient error over parameters and floating-point inputs.

    ``forward(module, *inputs)`` defaults to calling the module.  The scalar
    being differentiated is a fixed random projection of the output.
    """
    wrapped = _Wrapped(randomize(module, seed), forward or (lambda m, *xs: m(*xs)))
    names = [n for n, _ in wrapped.named_parameters()]
    params = [p.detach() for _, p in wrapped.named_parameters()]
    float_pos = [i for i, x in enumerate(inputs) if torch.is_tensor(x) and x.is_floating_point()]
    with torch.no_grad():
        shape = wrapped(*inputs).shape
    proj = torch.randn(shape, generator=torch.Generator().manual_seed(seed + 1), dtype=torch.float64)

    def fn(*flat):
        xs = list(inputs)
        for i, v in zip(float_pos, flat[len(names):]):
            xs[i] = v
        out = functional_call(wrapped, dict(zip(names, flat[: len(names)])), tuple(xs))
        return (out * proj).sum()

    return torch_grad_check(fn, *params, *[inputs[i] for i in float_pos], h=h)

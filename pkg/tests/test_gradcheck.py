import numpy as np
import torch

from dyadflow.gradcheck import check_gradients, relative_error


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x ** 2

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * 2.02 * x   # 1% off


class Toy(torch.nn.Module):
    def __init__(self, wrong):
        super().__init__()
        self.w = torch.nn.Parameter(torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64))
        self.wrong = wrong

    def forward(self):
        sq = _WrongSquare.apply(self.w) if self.wrong else self.w ** 2
        return torch.sin(sq).sum()


def test_detects_wrong_gradient():
    m = Toy(False)
    assert max(r.max_rel_error for r in check_gradients(m, m)) < 1e-6
    m = Toy(True)
    assert max(r.max_rel_error for r in check_gradients(m, m)) > 5e-3


def test_relative_error_floor():
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == 0.5
    # below the floor the comparison is absolute
    assert relative_error(np.array([1e-8]), np.array([2e-8]))[0] == 1e-8 / 1e-5

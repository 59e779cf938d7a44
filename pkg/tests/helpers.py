import numpy as np

from hsirecon.tensor import Tensor, ops, precision

from oracles import central_diff, rel_err


def gradcheck(build, arrays, step=1e-5, seed=0):
    """Compare autodiff gradients of ``sum(build(*tensors) * R)`` against central differences.

    ``arrays`` are float64 numpy arrays; returns the worst relative error
    over all of them.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        probe = build(*[Tensor(a) for a in arrays])
        weights = rng.standard_normal(probe.shape)

        def scalar():
            with precision(np.float64):
                out = build(*[Tensor(a) for a in arrays])
                return float(np.sum(out.data * weights))

        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        out = build(*tensors)
        loss = ops.sum(ops.mul(out, Tensor(weights)))
        loss.backward()
        worst = 0.0
        for t, a in zip(tensors, arrays):
            numeric = central_diff(scalar, a, step)
            worst = max(worst, rel_err(t.grad, numeric))
    return worst

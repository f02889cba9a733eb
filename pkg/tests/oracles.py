"""Slow, loop-based reference computations shared by the test modules."""
import numpy as np

from aeprnn.rnn import RnnParams


def naive_forward(Y, params: RnnParams, Yn=None, c1=1.0):
    """Single-window forward pass written with explicit index loops.

    ``Yn`` switches on the gated variant.  Returns ``(states, prediction)``.
    """
    T, N = Y.shape
    n = params.n_hidden
    z = [0.0] * n
    states = []
    for t in range(T):
        new = []
        for k in range(n):
            src = Y if Yn is None else Yn
            a = sum(params.w_zy[i, k] * src[t, i] for i in range(N))
            a += sum(params.w_zz[j, k] * z[j] for j in range(n))
            a += params.b[k]
            q = max(a, 0.0)
            if Yn is not None:
                q *= c1 * sum(params.w_zy[i, k] * Y[t, i] for i in range(N))
            new.append(q)
        z = new
        states.append(list(z))
    pred = [sum(params.w_fc[k, p] * z[k] for k in range(n)) + params.b_fc[p] for p in range(params.n_out)]
    return np.array(states), np.array(pred)


def batch_loss(params: RnnParams, Y, Yn, targets, mode, c1=1.0):
    preds = [naive_forward(Y[i], params, None if mode == "plain-rnn" else Yn[i], c1)[1][0] for i in range(len(Y))]
    return float(np.mean((np.array(preds) - targets) ** 2))


def finite_difference_errors(params: RnnParams, Y, Yn, targets, mode, grads, h=1e-5, c1=1.0):
    """Max relative error per tensor between ``grads`` and central differences.

    Uses the vectorised forward for speed; the relative error denominator is
    ``max(|analytic|, |numeric|, 1e-6)``.
    """
    from aeprnn.rnn import predict

    def loss():
        pred = predict(Y, Yn, params, mode, c1)[:, 0]
        return float(np.mean((pred - targets) ** 2))

    worst = {}
    for name, g in zip(("w_zy", "w_zz", "b", "w_fc", "b_fc"), grads.tensors()):
        p = getattr(params, name)
        err = 0.0
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            num = (up - down) / (2 * h)
            err = max(err, abs(num - g[idx]) / max(abs(g[idx]), abs(num), 1e-6))
        worst[name] = err
    return worst


def random_small_net(rng, n_in=3, n_hidden=8):
    s = 0.5
    return RnnParams(
        rng.normal(0, s, (n_in, n_hidden)),
        rng.normal(0, s / np.sqrt(n_hidden), (n_hidden, n_hidden)),
        rng.normal(0, 0.1, n_hidden),
        rng.normal(0, s, (n_hidden, 1)),
        rng.normal(0, 0.1, 1),
    )

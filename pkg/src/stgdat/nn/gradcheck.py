"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps vanishing gradients from dividing by zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _probe(loss_fn, flat, i, h):
    orig = flat[i]
    vals = []
    for step in (h, -h):
        flat[i] = orig + step
        vals.append(float(loss_fn().data))
    flat[i] = orig
    return vals


def _estimates(loss_fn, flat, i, steps, coarse_h):
    for step in steps:
        fp, fm = _probe(loss_fn, flat, i, step)
        yield (fp - fm) / (2.0 * step)
    if coarse_h is not None:
        f1p, f1m = _probe(loss_fn, flat, i, coarse_h)
        f2p, f2m = _probe(loss_fn, flat, i, 2.0 * coarse_h)
        yield (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * coarse_h)


def grad_check(loss_fn, store, h=1e-6, max_entries=None, rng=None, floor=1e-6, names=None, coarse_h=None,
               stop_below=0.0):
    """Compare analytic gradients of ``loss_fn()`` to central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call and return a scalar :class:`Tensor`. When ``max_entries`` is
    given, each parameter is probed at its largest-gradient entry plus
    random entries up to that count (``rng`` required).

    ``h`` may be a sequence of steps. A small step rarely straddles an
    activation kink but loses digits to rounding on tiny gradients; a large
    step has the opposite weakness. Every step gives one central-difference
    estimate, ``coarse_h`` adds a fourth-order five-point estimate, and the
    estimate closest to the analytic value is scored. An analytic gradient
    that is wrong disagrees with all of them. Once an estimate agrees to
    within ``stop_below`` the remaining ones are skipped for that entry.

    Returns a dict name -> max relative error.
    """
    steps = tuple(np.atleast_1d(np.asarray(h, dtype=np.float64)))
    if not steps or min(steps) <= 0:
        raise ValueError(f"steps must be positive, got {h}")
    if coarse_h is not None and not coarse_h > 0:
        raise ValueError(f"coarse step must be positive, got {coarse_h}")
    store.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite at the check point")
    loss.backward()
    analytic = {k: g.copy() for k, g in store.grads().items()}
    store.zero_grad()

    report = {}
    for name in names or store.names():
        p = store[name]
        flat = p.data.reshape(-1)
        g = analytic[name].reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            if rng is None:
                raise ValueError("rng is required when sub-sampling entries")
            idx = np.unique(np.concatenate([[int(np.argmax(np.abs(g)))],
                                            rng.choice(flat.size, max_entries - 1, replace=False)]))
        worst = 0.0
        for i in idx:
            err = np.inf
            for est in _estimates(loss_fn, flat, i, steps, coarse_h):
                if not np.isfinite(est):
                    raise FloatingPointError(f"loss not finite while probing {name}[{i}]")
                err = min(err, float(relative_error(g[i], est, floor)))
                if err <= stop_below:
                    break
            worst = max(worst, err)
        report[name] = worst
    store.zero_grad()
    return report

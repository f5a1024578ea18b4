"""Built-in sanity battery behind `cmr selftest`.

Each check prints one PASS/FAIL line; the runner returns False if any
check fails. These are quick smoke versions of the full test suite:
algebraic invariants, a gradient check per enhancement module, loop
oracle agreement, and the neutralization equivalence.
"""

from __future__ import annotations

import numpy as np

from ..blocks import (NetworkConfig, build_network, network_forward, neutralize,
                      set_training, transfer_parameters)
from ..cme import CmeParams, cme_forward, cme_forward_naive, discrepancy
from ..sme import SmeParams, pointwise_cosine, sme_forward, sme_forward_naive
from ..tim import TimParams, tim_forward
from ..tensor.core import Tape, Tensor, backward, grad_check, sum_all
from ..tensor.rng import stream


def _randomized_cme(channels: int, seed: int) -> CmeParams:
    p = CmeParams.init(channels, r1=4, r2=4, seed=seed)
    g = stream(seed, 901)
    p.w3.data[:] = g.normal(0.0, 0.2, size=p.w3.data.shape)
    p.b3.data[:] = g.normal(0.0, 0.2, size=p.b3.data.shape)
    return p


def check_softmax_rows() -> bool:
    g = stream(7, 1)
    k = Tensor(g.normal(size=(2, 5, 4)))
    rows = discrepancy(k).d_hat.data.sum(axis=2)
    return bool(np.abs(rows - 1.0).max() <= 1e-9)


def check_gate_range() -> bool:
    g = stream(7, 2)
    x = Tensor(g.normal(size=(1, 4, 8, 5, 5)))
    p = _randomized_cme(8, 72)
    cap: dict = {}
    cme_forward(x, p, capture=cap)
    a = cap["gate"].data
    return bool((a > 0.0).all() and (a < 1.0).all())


def check_discrepancy_symmetry() -> bool:
    g = stream(7, 3)
    k = Tensor(g.normal(size=(2, 6, 3)))
    d = discrepancy(k).d.data
    return bool((d == np.transpose(d, (0, 2, 1))).all())


def check_cosine_invariants() -> bool:
    g = stream(7, 4)
    x = Tensor(g.normal(size=(1, 4, 6, 4, 4)))
    s = pointwise_cosine(x).data
    if not ((s >= -1.0 - 1e-12).all() and (s <= 1.0 + 1e-12).all()):
        return False
    s2 = pointwise_cosine(Tensor(x.data * 3.7)).data
    if np.abs(s - s2).max() > 1e-9:
        return False
    xs = Tensor(np.broadcast_to(x.data[:, :1], x.data.shape).copy())
    return bool((pointwise_cosine(xs).data == 1.0).all())


def check_sme_identity() -> bool:
    g = stream(7, 5)
    x = Tensor(g.normal(size=(1, 3, 8, 4, 4)))
    p = SmeParams.init(8, seed=75)
    y = sme_forward(x, p)
    return bool(np.abs(y.data - x.data).max() <= 1e-15)


def check_gradients() -> bool:
    g = stream(7, 6)
    x = Tensor(g.normal(size=(1, 3, 8, 4, 4)))
    cme_p = _randomized_cme(8, 76)
    err = grad_check(lambda t: sum_all(cme_forward(t, cme_p)), x)
    if err >= 1e-4:
        return False
    sme_p = SmeParams.init(8, seed=77)
    sme_p.wc.data[:] = stream(7, 61).normal(0.0, 0.3, size=sme_p.wc.data.shape)
    sme_p.bn.gamma.data[:] = 0.7
    err = grad_check(lambda t: sum_all(sme_forward(t, sme_p)), x)
    if err >= 1e-4:
        return False
    tim_p = TimParams.init(8)
    tim_p.wt.data[:] = stream(7, 62).normal(0.0, 0.4, size=tim_p.wt.data.shape)
    err = grad_check(lambda t: sum_all(tim_forward(t, tim_p)), x)
    return err < 1e-4


def check_loop_oracles() -> bool:
    g = stream(7, 8)
    x = Tensor(g.normal(size=(1, 3, 8, 4, 4)))
    p = _randomized_cme(8, 78)
    if np.abs(cme_forward(x, p).data - cme_forward_naive(x, p)).max() > 1e-10:
        return False
    sp = SmeParams.init(8, seed=79)
    sp.wc.data[:] = stream(7, 81).normal(0.0, 0.3, size=sp.wc.data.shape)
    sp.bn.gamma.data[:] = 0.6
    return bool(np.abs(sme_forward(x, sp).data - sme_forward_naive(x, sp)).max() <= 1e-10)


def check_neutralization() -> bool:
    cfg = NetworkConfig(stages=((1, 8), (1, 16)), classes=4, r1=4, r2=4, frames=4)
    plain = NetworkConfig(stages=((1, 8), (1, 16)), classes=4, r1=4, r2=4, frames=4,
                          cme_placement="none", sme_placement="none", with_tim=False)
    net = build_network(cfg, seed=9)
    control = build_network(plain, seed=9)
    neutralize(net)
    transfer_parameters(net, control)
    g = stream(7, 9)
    x = Tensor(g.uniform(0.0, 1.0, size=(2, 4, 1, 8, 8)))
    set_training(net, True)
    set_training(control, True)
    ya = network_forward(x, net).data
    yb = network_forward(x, control).data
    return bool(np.abs(ya - yb).max() <= 1e-9)


def check_backward_accumulation() -> bool:
    x = Tensor(np.array([1.5, -2.0, 0.5]), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x * x)
    grads = backward(tape, loss)
    return bool(np.abs(grads[x.tid].data - 2.0 * x.data).max() <= 1e-12)


CHECKS = (
    ("softmax_row_sums", check_softmax_rows),
    ("gate_open_interval", check_gate_range),
    ("discrepancy_symmetry", check_discrepancy_symmetry),
    ("cosine_invariants", check_cosine_invariants),
    ("sme_zero_init_identity", check_sme_identity),
    ("gradient_checks", check_gradients),
    ("loop_oracle_agreement", check_loop_oracles),
    ("neutralization_equivalence", check_neutralization),
    ("backward_accumulation", check_backward_accumulation),
)


def run_selftest(out=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            passed = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            out(f"FAIL {name} ({type(exc).__name__}: {exc})")
            ok = False
            continue
        out(f"{'PASS' if passed else 'FAIL'} {name}")
        ok = ok and passed
    return ok

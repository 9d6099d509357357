import time

import numpy as np
import pytest

from koopbound.kernels import FinalMapSpec, FinalMapTerm
from koopbound.network import ActivationSpec, LayerSpec, NetworkSpec

IDENTITY = ActivationSpec("identity")


def make_net(weights, orders, *, activation=IDENTITY, biases=None, T=1, m=1, rates=None, Ms=None, cs=None):
    """Small hand-built network; hidden layers get ``activation``, the last none."""
    layers = []
    for l, W in enumerate(weights):
        W = np.asarray(W, dtype=float)
        b = np.zeros(W.shape[0]) if biases is None else np.asarray(biases[l], dtype=float)
        layers.append(LayerSpec(W, b, activation if l < len(weights) - 1 else None))
    d_L = np.asarray(weights[-1]).shape[0]
    rates = rates or [1] * T
    Ms = Ms or [np.eye(m)] * T
    cs = cs or [np.eye(m)[0]] * T
    terms = tuple(FinalMapTerm(r, M, c) for r, M, c in zip(rates, Ms, cs))
    return NetworkSpec(tuple(layers), FinalMapSpec(terms, d_L, orders[-1]), tuple(orders), T, m)


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance bookkeeping: one (criterion, passed, detail) entry per check
ACCEPTANCE = []
SUITE_BUDGET_S = 300.0
_session = {}


def pytest_sessionstart(session):
    _session["start"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _session.get("start", time.perf_counter())
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    ok = elapsed <= SUITE_BUDGET_S
    terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  9b suite runtime: "
                                f"{elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")


def pytest_sessionfinish(session, exitstatus):
    if ACCEPTANCE and time.perf_counter() - _session.get("start", 0.0) > SUITE_BUDGET_S:
        session.exitstatus = 1

import math

import numpy as np
import pytest

from securemmd import model as M
from securemmd.kernels import KernelSpec

ARCH = M.NetworkArch(4, (5,), (3,), "tanh")


def toy(seed=0, n=10):
    r = np.random.default_rng(seed)
    Xl = r.normal(size=(n, 4))
    yl = np.where(r.random(n) < 0.5, -1.0, 1.0)
    Xs, Xt = r.normal(size=(n, 4)), r.normal(size=(n, 3)) + 0.5
    ys = np.where(r.random(n) < 0.5, -1.0, 1.0)
    return Xl, yl, Xs, Xt, ys


def test_init_deterministic_and_scaled():
    a, b = M.init_network(ARCH, 3), M.init_network(ARCH, 3)
    assert a.equal(b)
    assert not a.equal(M.init_network(ARCH, 4))
    assert all(np.all(bias == 0) for bias in a.biases)
    big = M.init_network(M.NetworkArch(100, (100,), (100,)), 0)
    w = big.weights[1].ravel()
    assert abs(w.var() * 100 - 1) < 0.2


def test_arch_validation():
    with pytest.raises(ValueError):
        M.NetworkArch(3, (4,), ())
    with pytest.raises(ValueError):
        M.NetworkArch(3, (4,), (2,), "sigmoid")
    assert M.NetworkArch(3, (4, 5), (6, 7)).aligned_layers == (2, 3)


def test_forward_examples():
    p = M.init_network(ARCH, 0).scaled(0.0)
    acts = M.forward(p, np.ones((2, 4)))
    assert np.all(acts.score == 0) and np.all(acts.last_hidden == 0)
    ident = M.init_network(M.NetworkArch(2, (), (2,), "relu"), 0)
    ident.weights[0] = np.eye(2)
    assert np.array_equal(M.forward(ident, [[1.0, -1.0]]).last_hidden, [[1.0, 0.0]])
    p = M.init_network(ARCH, 1)
    X = np.random.default_rng(1).normal(size=(3, 4))
    a1, a2 = M.forward(p, X), M.forward(p, X)
    assert all(np.array_equal(u, v) for u, v in zip(a1.post, a2.post))
    with pytest.raises(ValueError):
        M.forward(p, np.ones((2, 3)))


def test_translator_examples():
    assert M.translator_score(np.zeros((3, 2)), [1, -1, 1], [5.0, 7.0]) == 0
    assert M.translator_score([[1.0, 0.0]], [1], [2.0, 0.0]) == 2
    for t in ([1.0, 2.0], [-3.0, 0.5]):
        assert M.translator_score([[1.0, 0.0], [1.0, 0.0]], [1, -1], t) == 0
    with pytest.raises(ValueError):
        M.translator_vector(np.zeros((0, 2)), [])
    r = np.random.default_rng(2)
    H, y, T = r.normal(size=(6, 3)), np.sign(r.normal(size=6)), r.normal(size=(4, 3))
    assert np.allclose(M.translator_score(H, -y, T), -M.translator_score(H, y, T))


def test_taylor_loss_examples():
    assert M.taylor_logistic_loss(1, 0.0) == pytest.approx(0.693147, abs=1e-6)
    assert M.taylor_logistic_loss(-1, 0.0) == M.taylor_logistic_loss(1, 0.0)
    assert M.taylor_logistic_loss(1, 1.0) == pytest.approx(0.318147, abs=1e-6)
    assert float(M.logistic_loss(1, 1.0)) == pytest.approx(0.313262, abs=1e-6)
    assert abs(M.taylor_logistic_loss(1, 1.0) - M.logistic_loss(1, 1.0)) < 0.005
    for f in np.linspace(-3, 3, 13):
        assert M.taylor_logistic_loss(1, f) == pytest.approx(M.taylor_logistic_loss(-1, -f))


def test_taylor_loss_band():
    for y in (-1, 1):
        for f in np.linspace(-1, 1, 201):
            assert abs(M.taylor_logistic_loss(y, f) - M.logistic_loss(y, f)) <= 0.01


def test_taylor_grad():
    assert M.taylor_logistic_grad(1, 0.0) == -0.5
    assert M.taylor_logistic_grad(-1, 2.0) == 1.0
    h = 1e-5
    for y in (-1, 1):
        for f in (-2.0, -0.3, 0.7, 1.5):
            fd = (M.taylor_logistic_loss(y, f + h) - M.taylor_logistic_loss(y, f - h)) / (2 * h)
            assert abs(fd - M.taylor_logistic_grad(y, f)) <= 1e-8 * abs(M.taylor_logistic_grad(y, f))


def test_l2_reg():
    p = M.init_network(M.NetworkArch(1, (), (1,)), 0)
    z = p.scaled(0.0)
    v, g = M.l2_reg(z)
    assert v == 0 and np.all(g.flatten() == 0)
    p.weights = [np.array([[3.0]]), np.array([[0.0]])]
    v, g = M.l2_reg(p)
    assert v == 4.5 and g.weights[0][0, 0] == 3
    q = M.init_network(ARCH, 5)
    assert M.l2_reg(q.scaled(2.0))[0] == pytest.approx(4 * M.l2_reg(q)[0])


def test_backward_zero_and_reachability():
    p = M.init_network(ARCH, 0)
    acts = M.forward(p, np.random.default_rng(0).normal(size=(3, 4)))
    g = M.backward(p, acts, np.zeros(3), {1: np.zeros((3, 3))})
    assert np.all(g.flatten() == 0)
    g = M.backward(p, acts, None, {1: np.ones((3, 3))})
    assert np.any(g.weights[0] != 0)
    assert np.all(g.weights[-1] == 0) and np.all(g.biases[-1] == 0)
    with pytest.raises(ValueError):
        M.backward(p, acts, None, {1: np.ones((2, 3))})


def test_backward_score_fd():
    p = M.init_network(ARCH, 1)
    X = np.random.default_rng(1).normal(size=(5, 4))
    c = np.random.default_rng(2).normal(size=5)
    grads = M.backward(p, M.forward(p, X), c).flatten()
    base = p.flatten()
    h = 1e-6
    for k in range(base.size):
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        fd = (c @ M.forward(p.unflatten(up), X).score - c @ M.forward(p.unflatten(dn), X).score) / (2 * h)
        assert abs(fd - grads[k]) <= 1e-6 * max(1.0, abs(fd))


@pytest.mark.parametrize("spec", [KernelSpec("linear"), KernelSpec("polynomial", c=0, d=2),
                                  KernelSpec("gaussian", sigma=1.0), KernelSpec("gaussian", sigma=1.0, mode="taylor2")],
                         ids=lambda s: s.label())
def test_joint_objective_fd(spec):
    Xl, yl, Xs, Xt, ys = toy(0)
    ps = M.init_network(ARCH, 0)
    pt = M.init_network(M.NetworkArch(3, (4,), (3,), "tanh"), 1)
    assert ps.size + pt.size <= 200
    alpha, beta = 0.7, 0.1
    _, gs, gt = M.joint_objective(ps, pt, Xl, yl, Xs, Xt, ys, spec, alpha, beta)

    def total(vs, vt):
        br, _, _ = M.joint_objective(ps.unflatten(vs), pt.unflatten(vt), Xl, yl, Xs, Xt, ys, spec, alpha, beta)
        return br.total

    h = 1e-5
    for params, grads, side in ((ps, gs, 0), (pt, gt, 1)):
        base = params.flatten()
        an = grads.flatten()
        fd = np.zeros_like(base)
        for k in range(base.size):
            up, dn = base.copy(), base.copy()
            up[k] += h
            dn[k] -= h
            other = (pt if side == 0 else ps).flatten()
            args_up = (up, other) if side == 0 else (other, up)
            args_dn = (dn, other) if side == 0 else (other, dn)
            fd[k] = (total(*args_up) - total(*args_dn)) / (2 * h)
        big = np.abs(fd) > 1e-6
        assert np.all(np.abs(an - fd)[big] / np.abs(fd)[big] < 1e-4)
        assert np.all(np.abs(an - fd)[~big] < 1e-8)


def test_alpha_zero_removes_mmd_path():
    Xl, yl, Xs, Xt, ys = toy(1)
    ps = M.init_network(ARCH, 0)
    pt = M.init_network(M.NetworkArch(3, (4,), (3,), "tanh"), 1)
    spec = KernelSpec("gaussian")
    a = M.joint_objective(ps, pt, Xl, yl, Xs, Xt, ys, spec, 0.0, 0.01)
    b = M.joint_objective(ps, pt, Xl, yl, Xs, Xt, ys, spec, 0.0, 0.01, use_mmd=False)
    assert a[0].total == b[0].total
    assert a[1].equal(b[1]) and a[2].equal(b[2])


def test_sgd_step():
    p = M.init_network(M.NetworkArch(1, (), (1,)), 0)
    p.weights[0][0, 0] = 1.0
    g = p.zeros_like()
    assert M.sgd_step(p, g, 0.1).equal(p)
    g.weights[0][0, 0] = 0.5
    assert M.sgd_step(p, g, 0.1).weights[0][0, 0] == pytest.approx(0.95)
    q = M.init_network(ARCH, 2)
    gr = M.init_network(ARCH, 3)
    d1 = M.sgd_step(q, gr, 0.1).flatten() - q.flatten()
    d2 = M.sgd_step(q, gr, 0.2).flatten() - q.flatten()
    assert np.allclose(d2, 2 * d1)
    bad = gr.copy()
    bad.weights[0][0, 0] = np.nan
    with pytest.raises(M.TrainingError):
        M.sgd_step(q, bad, 0.1)
    with pytest.raises(ValueError):
        M.sgd_step(q, gr, 0.0)


def test_source_only_clips_scores():
    p = M.init_network(M.NetworkArch(2, (), (2,)), 0)
    p.weights[-1] = np.array([[100.0], [100.0]])
    p.weights[0] = np.eye(2)
    X = np.array([[1.0, 1.0]])
    br, _ = M.source_only_objective(p, X, [1.0], 0.0)
    f = M.SCORE_CLIP
    assert br.cls == pytest.approx(math.log(2) - f / 2 + f * f / 8)


def test_checkpoint_roundtrip(tmp_path):
    ps, pt = M.init_network(ARCH, 0), M.init_network(M.NetworkArch(3, (4,), (3,), "relu"), 1)
    M.save_checkpoint(tmp_path / "m.npz", {"source": ps, "target": pt}, {"seed": 4})
    got, meta = M.load_checkpoint(tmp_path / "m.npz")
    assert meta == {"seed": 4}
    assert got["source"].equal(ps) and got["target"].equal(pt)
    assert got["target"].arch == pt.arch

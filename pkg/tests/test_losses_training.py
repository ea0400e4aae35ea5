import math

import numpy as np
import pytest

from sliceocc.losses import DegenerateBatchError, loss_ce, loss_scal, total_loss
from sliceocc.numerics import NonFiniteError, Tensor
from sliceocc.training import OptimState, format_row, train_step


def one_hot(labels, C):
    return (labels[None] == np.arange(C).reshape((C,) + (1,) * labels.ndim)).astype(float)


def test_ce_examples():
    labels = np.random.default_rng(0).integers(0, 82, (4, 4, 2))
    assert loss_ce(Tensor(np.full((82, 4, 4, 2), 1 / 82)), labels).data == \
        pytest.approx(math.log(82), abs=1e-12)
    assert float(loss_ce(Tensor(one_hot(labels, 82)), labels).data) <= 1e-9
    half = np.full((2, 3), 0.5)
    assert loss_ce(Tensor(half), np.array([0, 1, 1])).data == pytest.approx(math.log(2))


def test_ce_clamps_zero_probability():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    val = float(loss_ce(Tensor(p), np.array([1, 1])).data)
    assert val == pytest.approx(-0.5 * math.log(1e-12))


def test_scal_geometric_half_example():
    labels = np.array([0, 0, 1, 2])  # half occupied
    p_empty = np.full(4, 0.5)
    probs = np.stack([p_empty, np.full(4, 0.25), np.full(4, 0.25)])
    val = float(loss_scal(Tensor(probs), labels, "geometric").data)
    assert val == pytest.approx(3 * math.log(2), abs=1e-9)


def scal_oracle(p, y):
    """Independent P/R/S evaluation over GT-present classes."""
    C = p.shape[0]
    terms = []
    for c in range(C):
        m = y == c
        if not m.any():
            continue
        tp = p[c][m].sum()
        t = math.log(tp / p[c].sum()) + math.log(tp / m.sum())
        if (~m).any():
            t += math.log((1 - p[c])[~m].sum() / (~m).sum())
        terms.append(-t)
    return sum(terms) / len(terms)


def test_scal_semantic_two_voxel_example():
    p = np.array([[0.8, 0.4], [0.2, 0.6]])  # voxel 0 -> (0.8, 0.2), voxel 1 -> (0.4, 0.6)
    y = np.array([0, 1])
    got = float(loss_scal(Tensor(p), y, "semantic").data)
    assert got == pytest.approx(scal_oracle(p, y), abs=1e-12)
    # hand value: P0 = 0.8/1.2, R0 = 0.8, S0 = 0.6 and P1 = 0.6/0.8, R1 = 0.6, S1 = 0.8
    hand = -(math.log(0.8 / 1.2) + math.log(0.8) + math.log(0.6)
             + math.log(0.6 / 0.8) + math.log(0.6) + math.log(0.8)) / 2
    assert got == pytest.approx(hand, abs=1e-12)


def test_scal_random_against_oracle_and_permutation():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(4, 30))
    p = np.exp(logits) / np.exp(logits).sum(0)
    y = rng.integers(0, 4, 30)
    y[:4] = np.arange(4)
    got = float(loss_scal(Tensor(p), y).data)
    assert got == pytest.approx(scal_oracle(p, y), abs=1e-12)
    perm = rng.permutation(30)
    assert float(loss_scal(Tensor(p[:, perm]), y[perm]).data) == pytest.approx(got, abs=1e-12)


def test_scal_presence_rule_gt_or_pred():
    p = np.array([[0.7, 0.2], [0.2, 0.7], [0.1, 0.1]])
    y = np.array([0, 1])
    d_gt, d_any = [], []
    loss_scal(Tensor(p), y, presence="gt", details=d_gt)
    loss_scal(Tensor(p), y, presence="gt_or_pred", details=d_any)
    assert [d["class"] for d in d_gt] == [0, 1]
    assert [d["class"] for d in d_any] == [0, 1, 2]


def test_scal_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        loss_scal(Tensor(np.full((2, 3), 0.5)), np.zeros(3, dtype=int), "geometric")
    with pytest.raises(ValueError):
        loss_scal(Tensor(np.full((2, 3), 0.5)), np.zeros(3, dtype=int), "other")


def test_perfect_prediction_losses_vanish_and_are_non_negative():
    y = np.random.default_rng(1).integers(0, 5, (3, 3, 3))
    y[0, 0, 0] = 0
    y[0, 0, 1] = 1
    _, rep = total_loss(Tensor(one_hot(y, 5)), y)
    assert rep.l_total <= 1e-6
    for v in (rep.l_ce, rep.l_geo, rep.l_sem):
        assert v >= 0.0
    p = np.random.default_rng(2).dirichlet(np.ones(5), size=27).T.reshape(5, 3, 3, 3)
    _, rep = total_loss(Tensor(p), y)
    assert min(rep.l_ce, rep.l_geo, rep.l_sem) >= 0.0


def test_total_is_exact_sum():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 3, (4, 4))
    y[0, 0] = 1
    p = rng.dirichlet(np.ones(3), size=16).T.reshape(3, 4, 4)
    t, rep = total_loss(Tensor(p), y)
    assert rep.l_total == rep.l_ce + rep.l_geo + rep.l_sem
    assert float(t.data) == rep.l_total
    assert len(rep.affinity) == len(np.unique(y))


def test_lr_zero_leaves_parameters_unchanged():
    w = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
    b = Tensor(np.array([0.3, 0.1]), requires_grad=True)
    opt = OptimState([w, b], lr=0.0, weight_decay=0.5)
    before = (w.data.copy(), b.data.copy())
    train_step(lambda: ((w * w).sum() + (b * b).sum(), None), opt)
    np.testing.assert_array_equal(w.data, before[0])
    np.testing.assert_array_equal(b.data, before[1])


def test_decay_only_on_matrices():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    opt = OptimState([w, b], lr=0.1, weight_decay=0.5)
    # zero objective gradient: only weight decay moves anything
    train_step(lambda: ((w * 0.0).sum() + (b * 0.0).sum(), None), opt)
    np.testing.assert_allclose(w.data, 0.95)
    np.testing.assert_array_equal(b.data, 1.0)


def test_adam_converges_on_quadratic():
    target = np.array([1.5, -0.7, 3.0])
    x = Tensor(np.zeros(3), requires_grad=True)
    opt = OptimState([x], lr=0.05, weight_decay=0.0)
    for _ in range(5000):
        train_step(lambda: (((x - target) * (x - target)).sum(), None), opt)
    assert np.max(np.abs(x.data - target)) < 1e-6


def test_non_finite_loss_aborts_before_update():
    w = Tensor(np.array([[1.0]]), requires_grad=True)
    opt = OptimState([w], lr=0.1)
    with pytest.raises(NonFiniteError) as err:
        train_step(lambda: ((w * np.inf).sum(), None), opt)
    assert "train_step 1" in str(err.value.op)
    np.testing.assert_array_equal(w.data, [[1.0]])
    assert opt.step == 0


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        opt = OptimState([w], lr=0.01)
        out = []
        for _ in range(20):
            train_step(lambda: ((w @ w).sum() * (w * w).sum(), None), opt)
            out.append(w.data.copy())
        return np.array(out)

    assert run().tobytes() == run().tobytes()


def test_csv_row_format_is_lossless():
    row = format_row([3, 0.1, 1 / 3, 2.0, 2.433, 0.5])
    assert row.split(",")[0] == "3"
    assert float(row.split(",")[2]) == 1 / 3

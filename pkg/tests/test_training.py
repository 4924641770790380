import numpy as np
import pytest

from prgflow.bench import load_corpus
from prgflow.errors import ConfigError
from prgflow.estimators import CascadeConfig
from prgflow.network import count_params_flops, init_weights
from prgflow.training import TrainConfig, history_csv, train, train_student

CASCADE = CascadeConfig.parse("Tx1,Sx1")
TINY_WIDTHS = (2, 3)


def _cfg(**kw):
    base = dict(lr=1e-4, batch=8, epochs=1, patience=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_train_one_epoch_produces_history():
    corpus = load_corpus("procedural:12x320:0")
    weights, history = train(corpus, _cfg(), CASCADE, widths=TINY_WIDTHS)
    assert len(history) == 1
    init = init_weights(CASCADE, widths=TINY_WIDTHS, seed=0)
    moved = any(not np.allclose(a, b) for a, b in zip(weights.arrays(), init.arrays()))
    assert moved


def test_train_deterministic():
    corpus = load_corpus("procedural:12x320:1")
    w1, h1 = train(corpus, _cfg(), CASCADE, widths=TINY_WIDTHS)
    w2, h2 = train(corpus, _cfg(), CASCADE, widths=TINY_WIDTHS)
    assert h1 == h2
    for a, b in zip(w1.arrays(), w2.arrays()):
        assert np.array_equal(a, b)


def test_train_undersized_corpus():
    corpus = load_corpus("procedural:4x320:2")
    with pytest.raises(ConfigError):
        train(corpus, _cfg(batch=32), CASCADE, widths=TINY_WIDTHS)


def test_train_loss_decreases_over_epochs():
    corpus = load_corpus("procedural:12x320:3")
    _, history = train(corpus, _cfg(epochs=4, lr=1e-3), CASCADE, widths=TINY_WIDTHS)
    first, last = history[0][1], history[-1][1]
    assert last < first


def test_train_student_sizing_contract():
    corpus = load_corpus("procedural:12x320:4")
    teacher, _ = train(corpus, _cfg(), CASCADE, widths=(8, 16))
    with pytest.raises(ConfigError):
        # student as large as the teacher violates the 10x budget
        train_student(teacher, "scratch", corpus, _cfg(), widths=(8, 16))


def test_train_student_modes_run():
    corpus = load_corpus("procedural:12x320:5")
    teacher, _ = train(corpus, _cfg(), CASCADE, widths=(16, 32))
    tp, _ = count_params_flops(teacher)
    for mode in ("scratch", "projection", "distill"):
        student = train_student(teacher, mode, corpus, _cfg(), widths=TINY_WIDTHS)
        sp, _ = count_params_flops(student)
        assert sp * 10 <= tp
        assert student.cascade.describe() == teacher.cascade.describe()
    with pytest.raises(ConfigError):
        train_student(teacher, "prune", corpus, _cfg(), widths=TINY_WIDTHS)


def test_distill_identical_architecture_zero_start():
    from prgflow.bench import gen_pair, WarpRange
    from prgflow.losses import loss_distill
    from prgflow.training import _forward_sample

    corpus = load_corpus("procedural:12x320:6")
    teacher, _ = train(corpus, _cfg(), CASCADE, widths=TINY_WIDTHS)
    # student with identical weights predicts identically: distill loss 0
    p1, p2, truth = gen_pair(corpus[0], WarpRange.preset("gamma1"), 3)
    h, _ = _forward_sample(teacher, p1, p2, None, need_cache=False)
    v, _ = loss_distill(h, h)
    assert v == 0.0


def test_history_csv_format():
    text = history_csv([(0, 0.5, 0.6), (1, 0.4, 0.55)])
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss"
    assert lines[1].startswith("0,")
    assert len(lines) == 3

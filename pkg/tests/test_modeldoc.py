import numpy as np
import pytest

from rigline.baseline_learners import (
    MlpConfig,
    train_cart,
    train_mlp,
    train_naive_bayes,
    train_random_forest,
    train_rule_list,
)
from rigline.dataset import default_synthetic_config, generate_synthetic
from rigline.errors import ParseError
from rigline.imbalance import CostMatrix, cost_sensitive_wrap
from rigline.modeldoc import load_model, model_from_text, model_to_text, save_model
from rigline.stacking import LearnerSpec, StackSpec, train_learner, train_stack
from rigline.svm_smo import SmoConfig, calibrate_probability, decision_values, smo_train


def synth(n=150, seed=0):
    return generate_synthetic(default_synthetic_config(row_count=n, seed=seed))


def round_trip(model, tmp_path, name):
    p = tmp_path / f"{name}.txt"
    save_model(model, str(p))
    back = load_model(str(p))
    # A second serialization of the reload must be byte-identical.
    assert model_to_text(back) == model_to_text(model)
    return back


def test_nb_round_trip(tmp_path):
    d = synth(seed=1)
    m = train_naive_bayes(d)
    back = round_trip(m, tmp_path, "nb")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))
    assert back.classes == m.classes


def test_tree_round_trip(tmp_path):
    d = synth(seed=2)
    m = train_cart(d, max_depth=5)
    back = round_trip(m, tmp_path, "tree")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))


def test_forest_round_trip(tmp_path):
    d = synth(seed=3)
    m = train_random_forest(d, n_trees=7, seed=4, max_depth=4)
    back = round_trip(m, tmp_path, "rf")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))


def test_rule_list_round_trip(tmp_path):
    d = synth(seed=5)
    m = train_rule_list(d)
    back = round_trip(m, tmp_path, "part")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))
    assert [r.conditions for r in back.rules] == [r.conditions for r in m.rules]


def test_mlp_round_trip(tmp_path):
    d = synth(seed=6)
    m = train_mlp(d, MlpConfig(epochs=10, seed=1))
    back = round_trip(m, tmp_path, "mlp")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))


def test_svm_round_trip(tmp_path):
    d = synth(seed=7)
    m = smo_train(d, SmoConfig(C=1.0))
    back = round_trip(m, tmp_path, "svm")
    assert np.array_equal(decision_values(back, d.X), decision_values(m, d.X))
    assert back.b == m.b
    assert back.dual_objective == m.dual_objective
    assert np.array_equal(back.sv_indices, m.sv_indices)
    assert back.converged == m.converged


def test_calibrated_svm_round_trip(tmp_path):
    d = synth(seed=8)
    m = smo_train(d, SmoConfig(C=1.0))
    cal = calibrate_probability(m, d)
    back = round_trip(cal, tmp_path, "svm_cal")
    assert np.array_equal(back.predict_proba(d.X), cal.predict_proba(d.X))
    assert back.A == cal.A and back.B == cal.B


def test_scaled_smo_round_trip(tmp_path):
    d = synth(seed=9)
    m = train_learner("smo", d, seed=0)
    back = round_trip(m, tmp_path, "scaled")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))
    assert list(back.predict(d.X)) == list(m.predict(d.X))


def test_costwrap_round_trip(tmp_path):
    d = synth(seed=10)
    m = cost_sensitive_wrap(train_naive_bayes(d), CostMatrix([[0, 1], [6.7, 0]]))
    back = round_trip(m, tmp_path, "costwrap")
    assert list(back.predict(d.X)) == list(m.predict(d.X))
    assert np.array_equal(back.cm.m, m.cm.m)


def test_stack_round_trip(tmp_path):
    d = synth(n=250, seed=11)
    spec = StackSpec(
        base=(LearnerSpec("nb"), LearnerSpec("tree", (("max_depth", 3),))),
        folds=3,
        seed=7,
    )
    m = train_stack(d, spec)
    back = round_trip(m, tmp_path, "stack")
    assert np.array_equal(back.predict_proba(d.X), m.predict_proba(d.X))
    assert back.spec == m.spec


def test_unknown_kind_rejected():
    with pytest.raises(ParseError):
        model_from_text("model quantum\nclasses []\n")


def test_truncated_document_rejected():
    d = synth(seed=12)
    text = model_to_text(train_naive_bayes(d))
    with pytest.raises(ParseError):
        model_from_text("\n".join(text.splitlines()[:3]))

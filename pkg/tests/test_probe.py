"""
Unit tests for linear probes.
"""
import pytest
import numpy as np

from entityprobes.embedstore import EmbeddingStore, SynthSpec, random_embeddings, synthesize
from entityprobes.exceptions import EmbeddingError, KindMismatchError, TrainingError, ValidationError
from entityprobes.probe import (
    ProbeConfig,
    ProbeModel,
    cross_entropy_objective,
    evaluate,
    featurize,
    huber_objective,
    mean_baseline,
    run_task,
    train_classifier,
    train_regressor,
)
from entityprobes.taskgen import Instance, TaskDataset, gen_popularity_tasks, gen_type_task


def numeric_gradient(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        old = x[index]
        x[index] = old + eps
        up = f()
        x[index] = old - eps
        down = f()
        x[index] = old
        grad[index] = (up - down) / (2 * eps)
    return grad


def labelled_task(task_id, ids, labels, label_order, n_train):
    instances = [Instance((e,), label) for e, label in zip(ids, labels)]
    kind = "regression" if not label_order else ("binary" if len(label_order) == 2 else "multiclass")
    return TaskDataset(task_id, kind, list(label_order), instances[:n_train], instances[n_train:])


@pytest.fixture
def separable_store():
    """Two classes far apart along the first axis."""
    rng = np.random.default_rng(0)
    ids = [f"E{i}" for i in range(40)]
    vectors = rng.normal(0.0, 0.1, (40, 3))
    vectors[:20, 0] += 2.0
    vectors[20:, 0] -= 2.0
    return EmbeddingStore(ids, vectors)


@pytest.fixture
def separable_task(separable_store):
    """Binary task whose label is the sign of the first coordinate."""
    ids = separable_store.ids
    order = [i for pair in zip(range(20), range(20, 40)) for i in pair]
    labels = ["pos" if i < 20 else "neg" for i in order]
    return labelled_task("S", [ids[i] for i in order], labels, ["pos", "neg"], 20)


class TestFeaturize:
    """Test cases for featurize."""

    def test_single_entity(self, tiny_store):
        """Test one entity gives its raw vector."""
        assert featurize(Instance(("A",), "x"), tiny_store).tolist() == [1.0, 0.0]

    def test_pair(self, tiny_store):
        """Test a pair gives the four-block vector."""
        features = featurize(Instance(("C", "C"), "x"), tiny_store)
        assert features.shape == (8,)
        assert features[4:6].tolist() == [0.0, 0.0]

    def test_missing_entity(self, tiny_store):
        """Test a missing vector is reported as None."""
        assert featurize(Instance(("A", "Z"), "x"), tiny_store) is None


class TestObjectives:
    """Test cases for the objective gradients."""

    @pytest.mark.parametrize("k,f", [(2, 3), (4, 10), (3, 1)])
    def test_cross_entropy_gradient(self, k, f):
        """Test analytic cross-entropy gradients against finite differences."""
        rng = np.random.default_rng(k * 10 + f)
        X = rng.standard_normal((12, f))
        Y = np.eye(k)[rng.integers(k, size=12)]
        W = rng.standard_normal((k, f))
        b = rng.standard_normal(k)
        _, dW, db = cross_entropy_objective(W, b, X, Y, 0.3)
        num_dW = numeric_gradient(lambda: cross_entropy_objective(W, b, X, Y, 0.3)[0], W)
        num_db = numeric_gradient(lambda: cross_entropy_objective(W, b, X, Y, 0.3)[0], b)
        assert np.allclose(dW, num_dW, rtol=1e-4, atol=1e-7)
        assert np.allclose(db, num_db, rtol=1e-4, atol=1e-7)

    @pytest.mark.parametrize("f", [1, 5, 10])
    def test_huber_gradient(self, f):
        """Test analytic Huber gradients against finite differences."""
        rng = np.random.default_rng(f)
        X = rng.standard_normal((15, f))
        y = 3.0 * rng.standard_normal(15)
        w = rng.standard_normal((1, f))
        b = rng.standard_normal(1)
        _, dw, db = huber_objective(w, b, X, y, 0.2, 1.0)
        num_dw = numeric_gradient(lambda: huber_objective(w, b, X, y, 0.2, 1.0)[0], w)
        num_db = numeric_gradient(lambda: huber_objective(w, b, X, y, 0.2, 1.0)[0], b)
        assert np.allclose(dw, num_dw, rtol=1e-4, atol=1e-7)
        assert np.allclose(db, num_db, rtol=1e-4, atol=1e-7)

    @pytest.mark.slow
    def test_cross_entropy_gradient_random_instances(self):
        """Test cross-entropy gradients on 100 random problems."""
        rng = np.random.default_rng(31)
        for _ in range(100):
            k, f, n = int(rng.integers(2, 6)), int(rng.integers(1, 7)), int(rng.integers(1, 15))
            X = rng.standard_normal((n, f))
            Y = np.eye(k)[rng.integers(k, size=n)]
            W = rng.standard_normal((k, f))
            b = rng.standard_normal(k)
            l2 = float(rng.uniform(0.0, 1.0))
            _, dW, db = cross_entropy_objective(W, b, X, Y, l2)
            assert np.allclose(dW, numeric_gradient(lambda: cross_entropy_objective(W, b, X, Y, l2)[0], W),
                               rtol=1e-4, atol=1e-6)
            assert np.allclose(db, numeric_gradient(lambda: cross_entropy_objective(W, b, X, Y, l2)[0], b),
                               rtol=1e-4, atol=1e-6)

    @pytest.mark.slow
    def test_huber_gradient_random_instances(self):
        """Test Huber gradients on 100 random problems."""
        rng = np.random.default_rng(32)
        for _ in range(100):
            f, n = int(rng.integers(1, 7)), int(rng.integers(1, 15))
            X = rng.standard_normal((n, f))
            y = 3.0 * rng.standard_normal(n)
            w = rng.standard_normal((1, f))
            b = rng.standard_normal(1)
            l2, delta = float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.2, 2.0))
            _, dw, db = huber_objective(w, b, X, y, l2, delta)
            assert np.allclose(dw, numeric_gradient(lambda: huber_objective(w, b, X, y, l2, delta)[0], w),
                               rtol=1e-4, atol=1e-6)
            assert np.allclose(db, numeric_gradient(lambda: huber_objective(w, b, X, y, l2, delta)[0], b),
                               rtol=1e-4, atol=1e-6)

    def test_huber_regimes(self):
        """Test quadratic and linear Huber branches."""
        X = np.zeros((2, 1))
        w = np.zeros((1, 1))
        loss, _, _ = huber_objective(w, np.zeros(1), X, np.array([0.5, 3.0]), 0.0, 1.0)
        assert loss == pytest.approx((0.125 + 2.5) / 2)


class TestTrainClassifier:
    """Test cases for train_classifier."""

    def test_separable(self, separable_task, separable_store):
        """Test a separable fixture is classified perfectly."""
        model, result = run_task(separable_task, separable_store)
        assert result.metrics.micro_f1 == 100.0
        assert result.metrics.macro_f1 == 100.0
        assert model.W.shape == (2, 3)

    def test_two_points(self):
        """Test a two-point fixture reaches 100% accuracy."""
        store = EmbeddingStore(["A", "B"], np.array([[1.0, 0.0], [-1.0, 0.0]]))
        task = TaskDataset("two", "binary", ["x", "y"],
                           [Instance(("A",), "x"), Instance(("B",), "y")],
                           [Instance(("A",), "x"), Instance(("B",), "y")])
        _, result = run_task(task, store)
        assert result.preds == ["x", "y"]

    def test_exact_type_embeddings(self, five_type_kb):
        """Test noise-free type one-hots give macro F1 100 on held-out entities."""
        store = synthesize(SynthSpec(dim=8, sigma=0.0, plant_popularity=False, seed=3), five_type_kb)
        task = gen_type_task(1, five_type_kb.ontology, 20, seed=4)
        _, result = run_task(task, store)
        assert result.metrics.macro_f1 == 100.0

    def test_random_labels_at_chance(self):
        """Test random labels over random vectors give macro F1 near 25."""
        scores = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            ids = [f"E{i}" for i in range(400)]
            store = random_embeddings(ids, 8, seed=100 + seed)
            labels = [str(x) for x in rng.integers(4, size=400)]
            task = labelled_task("rand", ids, labels, ["0", "1", "2", "3"], 200)
            _, result = run_task(task, store, ProbeConfig(max_epochs=100))
            scores.append(result.metrics.macro_f1)
        assert np.mean(scores) == pytest.approx(25.0, abs=5.0)

    def test_low_noise_type_embeddings(self, five_type_kb):
        """Test type one-hots with noise 0.05 still give macro F1 of at least 99."""
        store = synthesize(SynthSpec(dim=32, sigma=0.05, plant_popularity=False, seed=6), five_type_kb)
        task = gen_type_task(1, five_type_kb.ontology, 30, seed=4)
        _, result = run_task(task, store)
        assert result.metrics.macro_f1 >= 99.0

    @pytest.mark.slow
    def test_random_embeddings_type_task_at_chance(self, five_type_kb):
        """Test a five-type task on random vectors averages macro F1 near 20."""
        scores = []
        for seed in range(10):
            store = random_embeddings(five_type_kb.entity_ids(), 32, seed=200 + seed)
            task = gen_type_task(1, five_type_kb.ontology, 30, seed=seed)
            _, result = run_task(task, store, ProbeConfig(max_epochs=100))
            scores.append(result.metrics.macro_f1)
        assert np.mean(scores) == pytest.approx(20.0, abs=8.0)

    def test_losses_non_increasing(self, separable_task, separable_store):
        """Test every accepted step lowers the loss."""
        model = train_classifier(separable_task, separable_store)
        losses = model.training_log.losses
        assert len(losses) > 1
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_deterministic(self, separable_task, separable_store):
        """Test two trainings give identical weights."""
        a = train_classifier(separable_task, separable_store)
        b = train_classifier(separable_task, separable_store)
        assert np.array_equal(a.W, b.W)
        assert a.training_log.losses == b.training_log.losses

    def test_probabilities_sum_to_one(self, separable_task, separable_store):
        """Test softmax rows sum to one."""
        model = train_classifier(separable_task, separable_store)
        proba = model.predict_proba(separable_store.vectors)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_label_permutation(self, five_type_kb):
        """Test renaming labels consistently permutes predictions and keeps macro F1."""
        store = synthesize(SynthSpec(dim=8, sigma=0.8, plant_popularity=False, seed=5), five_type_kb)
        task = gen_type_task(1, five_type_kb.ontology, 20, seed=4)
        rename = {"T0": "T3", "T1": "T4", "T2": "T0", "T3": "T1", "T4": "T2"}
        renamed = TaskDataset(
            task.task_id, task.kind, [rename[label] for label in task.labels],
            [Instance(i.inputs, rename[i.label]) for i in task.train],
            [Instance(i.inputs, rename[i.label]) for i in task.test],
        )
        _, original = run_task(task, store)
        _, permuted = run_task(renamed, store)
        assert permuted.preds == [rename[p] for p in original.preds]
        assert permuted.metrics.macro_f1 == pytest.approx(original.metrics.macro_f1)

    def test_feature_scale(self, separable_task, separable_store):
        """Test scaling features by c with l2 / c^2 keeps the predictions."""
        c = 4.0
        scaled = EmbeddingStore(separable_store.ids, c * separable_store.vectors)
        a = train_classifier(separable_task, separable_store, ProbeConfig(l2=1e-2))
        b = train_classifier(separable_task, scaled, ProbeConfig(l2=1e-2 / c ** 2))
        assert a.predict(separable_store.vectors) == b.predict(scaled.vectors)

    def test_single_label_train(self, tiny_store):
        """Test a train split with one label raises."""
        task = TaskDataset("one", "binary", ["x", "y"], [Instance(("A",), "x"), Instance(("B",), "x")])
        with pytest.raises(TrainingError):
            train_classifier(task, tiny_store)

    def test_regression_rejected(self, tiny_store):
        """Test a regression dataset is rejected."""
        task = TaskDataset("P-R", "regression", [], [Instance(("A",), 1.0)])
        with pytest.raises(KindMismatchError):
            train_classifier(task, tiny_store)

    def test_no_embeddings(self, tiny_store):
        """Test a train split without any known entity raises."""
        task = TaskDataset("none", "binary", ["x", "y"], [Instance(("Z",), "x"), Instance(("Y",), "y")])
        with pytest.raises(TrainingError):
            train_classifier(task, tiny_store)


class TestTrainRegressor:
    """Test cases for train_regressor and mean_baseline."""

    @pytest.fixture
    def gaussian_store(self):
        """200 random 4-dimensional vectors."""
        return random_embeddings([f"E{i}" for i in range(200)], 4, seed=8)

    def test_exact_linear(self, gaussian_store):
        """Test labels linear in one dim are fit almost exactly."""
        ids = gaussian_store.ids
        labels = [2.0 * gaussian_store.get(e)[1] + 1.0 for e in ids]
        task = labelled_task("P-R", ids, labels, [], 100)
        _, result = run_task(task, gaussian_store, ProbeConfig(l2=0.0, max_epochs=3000, tol=1e-14))
        assert result.metrics.rmse < 1e-3

    def test_constant_labels(self, gaussian_store):
        """Test constant labels are predicted as that constant."""
        task = labelled_task("P-R", gaussian_store.ids, [2.5] * 200, [], 100)
        _, result = run_task(task, gaussian_store, ProbeConfig(max_epochs=2000, tol=1e-14))
        assert result.metrics.rmse < 1e-3

    def test_noise_labels(self, gaussian_store):
        """Test pure-noise labels do not beat the mean baseline."""
        rng = np.random.default_rng(2)
        task = labelled_task("P-R", gaussian_store.ids, list(rng.standard_normal(200)), [], 100)
        _, result = run_task(task, gaussian_store)
        assert result.metrics.rmse >= 0.95 * result.baseline_rmse

    def test_planted_popularity_beats_baseline(self, five_type_kb):
        """Test a planted ln(1 + links) channel gives RMSE at least 20% below the mean baseline."""
        store = synthesize(SynthSpec(dim=8, sigma=0.1, plant_types=False, seed=9), five_type_kb)
        task = gen_popularity_tasks("regression", five_type_kb.popularity, 100, seed=9, regression_size=100)
        _, result = run_task(task, store, ProbeConfig(max_epochs=2000, tol=1e-12))
        assert result.metrics.rmse <= 0.8 * result.baseline_rmse

    def test_classification_rejected(self, separable_task, separable_store):
        """Test a classification dataset is rejected."""
        with pytest.raises(KindMismatchError):
            train_regressor(separable_task, separable_store)

    def test_mean_baseline_exact(self):
        """Test train {0, 2} and test {1} give RMSE 0."""
        task = TaskDataset("P-R", "regression", [],
                           [Instance(("A",), 0.0), Instance(("B",), 2.0)], [Instance(("C",), 1.0)])
        assert mean_baseline(task) == 0.0

    def test_mean_baseline_hand_computed(self):
        """Test train {0, 0} and test {3, -3} give RMSE 3."""
        task = TaskDataset("P-R", "regression", [],
                           [Instance(("A",), 0.0), Instance(("B",), 0.0)],
                           [Instance(("C",), 3.0), Instance(("D",), -3.0)])
        assert mean_baseline(task) == pytest.approx(3.0)

    def test_mean_baseline_empty_train(self):
        """Test an empty train split raises."""
        with pytest.raises(ValueError):
            mean_baseline(TaskDataset("P-R", "regression", [], [], [Instance(("C",), 1.0)]))


class TestEvaluate:
    """Test cases for evaluate and model persistence."""

    def test_classifier_on_regression(self, separable_task, separable_store):
        """Test applying a classifier to a regression task raises."""
        model = train_classifier(separable_task, separable_store)
        task = TaskDataset("P-R", "regression", [], [], [Instance(("E0",), 1.0)])
        with pytest.raises(KindMismatchError):
            evaluate(model, task, separable_store)

    def test_cross_task_flag(self, separable_task, separable_store):
        """Test a probe applied to another task with the same dims is flagged."""
        model = train_classifier(separable_task, separable_store)
        other = TaskDataset("S2", "binary", ["pos", "neg"], [], separable_task.train)
        result = evaluate(model, other, separable_store)
        assert result.cross_task
        assert result.model_task_id == "S"
        assert not evaluate(model, separable_task, separable_store).cross_task

    def test_dimension_mismatch(self, separable_task, separable_store, tiny_store):
        """Test a store of another dimension raises."""
        model = train_classifier(separable_task, separable_store)
        task = TaskDataset("T", "binary", ["pos", "neg"], [], [Instance(("A",), "pos")])
        with pytest.raises(EmbeddingError):
            evaluate(model, task, tiny_store)

    def test_dropped_counted(self, separable_task, separable_store):
        """Test test instances without vectors are dropped and counted."""
        model = train_classifier(separable_task, separable_store)
        test = list(separable_task.test) + [Instance(("missing",), "pos")]
        task = TaskDataset("S", "binary", ["pos", "neg"], [], test)
        result = evaluate(model, task, separable_store)
        assert result.dropped == 1
        assert len(result.golds) == len(separable_task.test)

    def test_model_round_trip(self, separable_task, separable_store, tmp_path):
        """Test a saved probe predicts like the original."""
        model = train_classifier(separable_task, separable_store, ProbeConfig(standardize=True))
        loaded = ProbeModel.load(model.save(tmp_path / "model.json"))
        assert loaded.labels == model.labels
        assert loaded.config == model.config
        assert loaded.predict(separable_store.vectors) == model.predict(separable_store.vectors)


class TestProbeConfig:
    """Test cases for ProbeConfig validation."""

    def test_defaults(self):
        """Test default settings."""
        cfg = ProbeConfig()
        assert cfg.l2 == 1e-4
        assert cfg.max_epochs == 500
        assert cfg.huber_delta == 1.0
        assert not cfg.standardize

    @pytest.mark.parametrize("kwargs", [{"l2": -1.0}, {"max_epochs": 0}, {"huber_delta": 0.0}])
    def test_invalid(self, kwargs):
        """Test invalid settings are rejected."""
        with pytest.raises(ValidationError):
            ProbeConfig(**kwargs)

import numpy as np
import pytest

from conformal_evalues import ScorerKind, TrainSpec, ingest_scores, score_batch, train_binary, train_one_class
from conformal_evalues.scoring import ScoreFileError, logistic_loss_and_grad

KNN1 = TrainSpec(kind=ScorerKind.ONE_CLASS_KNN, knn_k=1)


def test_knn_examples():
    twin = train_one_class(np.zeros((2, 2)), KNN1)
    assert score_batch(twin, [[0.0, 0.0]]).tolist() == [0.0]
    line = train_one_class([[0.0, 0.0], [1.0, 0.0]], KNN1)
    assert score_batch(line, [[3.0, 0.0]]).tolist() == [2.0]
    assert score_batch(line, np.empty((0, 2))).shape == (0,)


def test_knn_mean_of_k_neighbours():
    model = train_one_class([[0.0], [1.0], [3.0], [10.0]], TrainSpec(kind="one_class_knn", knn_k=2))
    assert score_batch(model, [[0.0]]) == pytest.approx([0.5])


def test_knn_row_order_and_determinism():
    rng = np.random.default_rng(0)
    train = rng.normal(size=(40, 3))
    pts = rng.normal(size=(15, 3))
    spec = TrainSpec(kind="one_class_knn", knn_k=4)
    a = score_batch(train_one_class(train, spec), pts)
    b = score_batch(train_one_class(train[rng.permutation(40)], spec), pts)
    assert np.array_equal(a, b)
    assert np.array_equal(a, score_batch(train_one_class(train, spec), pts))
    assert np.all(a >= 0)


def test_knn_errors():
    with pytest.raises(ValueError):
        train_one_class(np.zeros((5, 2)), TrainSpec(kind="one_class_knn", knn_k=5))
    model = train_one_class(np.zeros((3, 2)), KNN1)
    with pytest.raises(ValueError, match="dimension mismatch"):
        score_batch(model, np.zeros((1, 3)))


def test_logistic_zero_iterations_scores_half():
    model = train_binary([[-1.0]], [[1.0]], TrainSpec(max_iters=0))
    assert score_batch(model, [[-5.0], [0.0], [7.0]]).tolist() == [0.5, 0.5, 0.5]


def test_logistic_separable_converges_to_high_probability():
    spec = TrainSpec(l2_lambda=0.0, learning_rate=1.0, max_iters=5000)
    model = train_binary(-np.ones((5, 1)), np.ones((5, 1)), spec)
    assert score_batch(model, [[10.0]])[0] > 0.99
    assert score_batch(model, [[-10.0]])[0] < 0.01


def test_logistic_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        train_binary(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        train_binary(np.zeros((0, 2)), np.zeros((3, 2)))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(30, 4))
    y = (rng.random(30) < 0.4).astype(float)
    for lam in (0.0, 1e-4, 1.0):
        for _ in range(5):
            params = rng.normal(size=5)
            _, grad = logistic_loss_and_grad(params, x, y, lam)
            h = 1e-6
            numeric = np.empty(5)
            for i in range(5):
                step = np.zeros(5)
                step[i] = h
                numeric[i] = (
                    logistic_loss_and_grad(params + step, x, y, lam)[0]
                    - logistic_loss_and_grad(params - step, x, y, lam)[0]
                ) / (2 * h)
            assert grad == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_bag_shuffle_gives_bit_identical_coefficients():
    rng = np.random.default_rng(2)
    inl = rng.normal(size=(60, 5))
    bag = rng.normal(size=(80, 5)) + 0.5
    spec = TrainSpec(max_iters=200)
    ref = train_binary(inl, bag, spec)
    for _ in range(5):
        other = train_binary(inl[rng.permutation(60)], bag[rng.permutation(80)], spec)
        assert np.array_equal(other.coef, ref.coef)
        assert other.intercept == ref.intercept
        assert other.train_fingerprint == ref.train_fingerprint


def write(tmp_path, text, name="scores.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_single_repetition(tmp_path):
    sets = ingest_scores(write(tmp_path, "repetition,role,score\n1,cal,0.1\n1,test,0.9\n"))
    assert len(sets) == 1
    assert (sets[0].n_cal, sets[0].n_test) == (1, 1)
    assert sets[0].repetition_index == 1


def test_ingest_seed_controls_jitter(tmp_path):
    body = "repetition,role,score\n1,cal,0.5\n1,cal,0.5\n1,test,0.5\n"
    a = ingest_scores(write(tmp_path, "# seed: 3\n" + body, "a.csv"))[0]
    b = ingest_scores(write(tmp_path, "# seed: 3\n" + body, "b.csv"))[0]
    c = ingest_scores(write(tmp_path, "# seed: 4\n" + body, "c.csv"))[0]
    assert np.array_equal(a.cal_scores, b.cal_scores)
    assert not np.array_equal(a.pooled(), c.pooled())
    assert np.unique(a.pooled()).size == 3


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "no repetitions"),
        ("repetition,role,score\n", "no repetitions"),
        ("repetition,score\n1,0.2\n", "missing columns"),
        ("repetition,role,score\n1,cal,0.1\n1,test,0.2\n2,cal,0.1\n2,test,0.3\n2,test,0.4\n",
         "inconsistent test size"),
        ("repetition,role,score\n1,cal,0.1\n1,test,nan\n", "line 3"),
        ("repetition,role,score\n1,cal,abc\n", "line 2"),
        ("repetition,role,score\n1,train,0.1\n", "line 2"),
        ("repetition,role,score\n1,cal,0.1,9\n", "line 2"),
    ],
)
def test_ingest_errors(tmp_path, text, message):
    with pytest.raises(ScoreFileError, match=message):
        ingest_scores(write(tmp_path, text))

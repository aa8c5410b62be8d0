import numpy as np
import pytest

import myograph


@pytest.fixture(scope="module")
def corpus():
    return myograph.generate_corpus(subjects=1, clips_per_exercise=3, duration=6.0, seed=3)


def test_constants():
    assert len(myograph.EXERCISES) == 20
    assert len(myograph.MUSCLES) == 8
    assert "Squats" in myograph.EXERCISES


def test_corpus_shapes(corpus):
    assert len(corpus) == 60
    clip = corpus.clip(0)
    assert clip["keypoints"].shape == (60, 25, 2)
    assert clip["emg_raw"].shape == (60, 8)
    assert clip["split"] in ("train", "val", "test")
    assert (clip["emg_raw"] >= 0).all()
    with pytest.raises(IndexError):
        corpus.clip(len(corpus))


def test_generation_is_deterministic(corpus):
    again = myograph.generate_corpus(subjects=1, clips_per_exercise=3, duration=6.0, seed=3)
    assert again.to_jsonl() == corpus.to_jsonl()


def test_round_trip_through_file(corpus, tmp_path):
    path = tmp_path / "c.jsonl"
    corpus.save(path)
    loaded = myograph.load_dataset(path)
    assert loaded.clip_ids == corpus.clip_ids
    np.testing.assert_array_equal(loaded.clip(5)["emg_raw"], corpus.clip(5)["emg_raw"])


def test_windows_and_prediction(corpus):
    x, y, ex = corpus.windows("test", 10)
    assert x.shape[1:] == (10, 50)
    assert y.shape == (x.shape[0], 10, 8)
    assert len(ex) == x.shape[0]
    model = myograph.Model.create("transformer", seed=1)
    assert model.is_transformer
    pred = model.predict(x[:3])
    assert pred.shape == (3, 10, 8)
    assert np.isfinite(pred).all()
    np.testing.assert_array_equal(pred, model.predict(x[:3]))
    assert myograph.rmse(y, y) == 0.0
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 10, 7)))


def test_invalid_arguments(corpus):
    with pytest.raises(ValueError):
        myograph.generate_corpus(duration=1.0)
    with pytest.raises(ValueError):
        corpus.windows("holdout", 10)
    with pytest.raises(ValueError):
        corpus.windows("test", 7)


def test_builtin_checks_pass():
    for r in myograph.oracle_contracts():
        assert r["passed"], r
    grads = myograph.gradient_checks(0)
    assert grads and all(r["passed"] for r in grads)

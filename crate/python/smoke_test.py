"""Smoke test for the essay_scoring extension module.

Build first:  pip install --no-build-isolation -e crates/py
"""

import json
import os
import tempfile

import essay_scoring as es

QUICK = json.dumps({
    "dnn": {"hidden": 16, "epochs": 10, "lr": 0.01},
    "lstm": {"hidden": 8, "epochs": 2, "lr": 0.01},
    "forest": {"n_trees": 20},
})


def main():
    assert es.qwk([1, 1, 2, 2, 3], [1, 2, 2, 3, 3], 1, 3) == 0.6875
    assert es.qwk([1, 2], [2, 1], 1, 2) == -1.0

    corpus = es.synthetic_corpus(n_essays=200, essay_set=1, seed=7)
    train, test = corpus[:170], corpus[170:]
    texts = [r[2] for r in train]
    scores = [r[3] for r in train]

    bundle = es.Bundle.train(texts, scores, 1, 4, essay_set=1, dim=16, seed=3, config=QUICK)
    print(bundle)
    assert bundle.scale == (1, 4)
    assert bundle.dim == 16
    assert set(bundle.kappas) == {"lstm", "dnn", "svm", "forest"}

    out = bundle.score(test[0][2])
    assert 1 <= out["score"] <= 4
    assert set(out["per_model"]) == {"lstm", "dnn", "svm", "forest"}
    assert "warning" not in out

    empty = bundle.score("")
    assert empty["score"] == 1 and "warning" in empty

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "set1.bundle")
        bundle.save(path)
        loaded = es.Bundle.load(path)
    assert loaded.to_bytes() == bundle.to_bytes()
    for _, _, text, _ in test:
        assert loaded.score(text) == bundle.score(text)

    rows = dict(bundle.evaluate([r[2] for r in test], [r[3] for r in test]))
    print("held-out qwk:", {k: round(v, 4) for k, v in rows.items()})
    assert list(rows) == ["lstm", "dnn", "svm", "forest", "combined"]

    try:
        es.Bundle.from_bytes(b"not a bundle")
    except ValueError as e:
        print("corrupt bundle rejected:", e)
    else:
        raise AssertionError("corrupt bundle accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()

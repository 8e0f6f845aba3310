"""Smoke test for the icl_lab extension module.

Build and install it first, e.g.

    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release
    python python/smoke_test.py
"""

import json
import math

import icl_lab


def main():
    r = icl_lab.textgen_samples_per_context(50_000, 100, 0.1, 0.01, mode="bigo")
    assert r.per_context == 46_051_702, r
    assert r.total == 4_605_170_200, r
    assert icl_lab.textgen_samples_per_context(20, 10, 0.2, 0.05, mode="exact").per_context == 44_936
    assert icl_lab.knn_context_size(0.1, 0.01) == 461
    assert icl_lab.bounded_textgen_size(5, 2, 0.2, 0.05) == 242
    assert icl_lab.coreset_size(5, 0.25) == 20
    assert math.isclose(icl_lab.subset_penalty(10_000), 0.01)

    p = icl_lab.Categorical([0.5, 0.25, 0.25])
    q = icl_lab.Categorical.uniform(3)
    assert math.isclose(p.l1_distance(q), 1 / 3)
    assert math.isclose(p.tv_distance(q), 1 / 6)
    draws = p.sample(1000, seed=7)
    assert draws == p.sample(1000, seed=7)
    emp = icl_lab.empirical_distribution(draws, 3)
    assert math.isclose(sum(emp.probs), 1.0)

    prompt = icl_lab.build_prompt(
        [("Great movie!", "positive"), ("Terrible plot.", "negative")], "Amazing soundtrack!"
    )
    assert prompt == "Great movie! positive [SEP] Terrible plot. negative [SEP] Amazing soundtrack!", prompt
    pairs = [("cats purr", "a"), ("dogs bark", "b"), ("cats nap", "c")]
    chosen = icl_lab.similarity_select(pairs, "cats", 2)
    assert {c[0] for c in chosen} == {"cats purr", "cats nap"}, chosen
    assert math.isclose(icl_lab.cosine_similarity([1.0, 0.0], [1.0, 0.0]), 1.0)
    assert len(icl_lab.embed_text("hello world", 16)) == 16

    xs = [[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]]
    ys = [0, 0, 1, 0, 1, 1]
    w, b = icl_lab.train_logistic(xs, ys)
    assert icl_lab.predict_prob(w, b, [3.0]) > 0.5 > icl_lab.predict_prob(w, b, [-3.0])
    assert icl_lab.knn_indices(xs, [0.9], 2) == [4, 3]

    cfg = {"kind": "textgen", "params": {"V": 6, "m": 2, "epsilon": 0.2, "delta": 0.05}, "trials": 20, "seed": 1}
    a = icl_lab.run_experiment(json.dumps(cfg), threads=1)
    b = icl_lab.run_experiment(json.dumps(cfg))
    assert a == b
    report = json.loads(a)
    assert report["trials"] == 20 and report["pass"], report["failure_rate"]

    try:
        icl_lab.knn_context_size(0.1, 1.5)
    except ValueError as e:
        assert "delta" in str(e)
    else:
        raise AssertionError("expected ValueError")

    print("icl_lab smoke test passed")


if __name__ == "__main__":
    main()

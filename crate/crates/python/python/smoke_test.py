"""Smoke test for the subrank_py extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python crates/python/python/smoke_test.py`.
"""

import math
import tempfile

import subrank_py as sr


def close(a, b, tol=1e-9):
    assert abs(a - b) <= tol, (a, b)


def main():
    value, grad = sr.loss("MR", [1.0, 2.0], [-1.0, -2.0])
    close(value, 1.5)
    assert grad == [-1.0, 1.0], grad

    value, _ = sr.loss("MR", [0.0, 0.0, 0.0], [-1.0, -2.0, -3.0])
    close(value, 2.0)

    value, _ = sr.loss("MR_AS", [math.log(3.0), 0.0], [-2.0, -4.0], margin=0.5, mix=1.0)
    close(value, 2.5 + max(0.0, 0.0 - math.log(3.0) + 0.5))

    value, grad = sr.loss("DPO_STAR", [0.3, -0.1, 0.2], [-1.0, -2.0, -3.0], ref_logits=[0.3, -0.1, 0.2])
    close(value, 0.0)

    close(sr.reference_pvalue(-1.0, [-2.0, -0.5, -1.0]), 1.0 / 3.0)
    close(sr.significance_proportion([0.0, 0.005, 0.5]), 2.0 / 3.0)
    close(sr.spearman([1, 2, 3, 4], [1, 3, 2, 4]), 0.8, 1e-12)
    close(sr.abr(-10.0, [-9.0, -11.0]), 1.0)
    close(sr.top2_ratio(-10.0, -12.0), 1.2)

    assert sr.build_prompt("It is critical.").endswith("It is critical.")
    assert "{the modified sentence}" in sr.GPTSCORE_PARAPHRASE_TEMPLATE

    try:
        sr.loss("HINGE", [0.0], [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mode accepted")

    with tempfile.TemporaryDirectory() as d:
        mlm_path, scorer_path = sr.write_toy_models(d, mlm_sentences=200, scorer_pairs=300, epochs=2)
        mlm = sr.MaskedLm.load(mlm_path)
        scorer = sr.Scorer.load(scorer_path, model_id="toy")
        text = sr.toy_sentences(1, seed=3)[0]
        sites = mlm.suggest(text, sites=5, pool_size=5)
        assert len(sites) == 5, sites
        for s in sites:
            assert len(s["candidates"]) == 5
            probs = [p for _, p in s["candidates"]]
            assert probs == sorted(probs, reverse=True)
        a = scorer.score(text, text)
        assert a < 0.0 and scorer.score(text, text) == a
        assert scorer.cache_hit_rate() > 0.0

    print("smoke test passed")


if __name__ == "__main__":
    main()

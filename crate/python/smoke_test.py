"""Smoke test for the lsda_py extension module.

Build and run from the repository root:

    cargo build --release -p lsda-python --features extension-module
    cp target/release/liblsda_py.so python/lsda_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import lsda_py as lsda


def main():
    h, w, c = 16, 16, 3
    pixels = [math.sin(0.1 * i) for i in range(h * w * c)]
    img = lsda.Image(h, w, c, pixels)
    assert img.shape == (h, w, c)
    assert lsda.ssim(img, img) == 1.0
    assert len(img.sobel_edges()) == h * w * 2 * c

    assert lsda.kl_closed_form(0.0, 1.0) == 0.0
    rows = lsda.lemma1_demo(2, [10, 100, 1000], 20, 1)
    assert rows[0][1] > rows[1][1] > rows[2][1]

    try:
        lsda.Image(2, 2, 1, [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("bad pixel count accepted")

    with tempfile.TemporaryDirectory() as out:
        cfg = lsda.Config(overrides=[
            f"output_dir={out}",
            "data.train_per_class=20",
            "data.test_per_class=6",
            "data.adapt_per_class=2",
            "classifier.epochs=1",
            "vae.epochs=1",
            "search.iterations=5",
            "metrics.frechet_samples=20",
        ])
        try:
            lsda.evaluate(cfg)
        except FileNotFoundError as e:
            assert "vae.ckpt" in str(e)
        else:
            raise AssertionError("eval without checkpoints succeeded")
        lsda.gen_data(cfg)
        lsda.train_classifier(cfg)
        vae_path = lsda.train_vae(cfg)
        before, after, n = lsda.adapt(cfg)
        assert n == 10 and 0.0 <= after <= 1.0
        metrics = dict(lsda.evaluate(cfg))
        assert "a_distance_source_vs_clone" in metrics

        vae = lsda.VaeModel.load(str(vae_path))
        clf = lsda.SourceClassifier.load(os.path.join(out, "classifier.ckpt"))
        target = lsda.Image.load_png(
            os.path.join(out, "data", "domain-B", "test", clf.class_names[0], os.listdir(
                os.path.join(out, "data", "domain-B", "test", clf.class_names[0]))[0]),
            32, 32, 3)
        z, clone, loss, trace = lsda.latent_search(vae, target, seed=3, iterations=10)
        assert len(z) == vae.latent_dim and len(trace) == 10
        assert loss == min(trace)
        label, probs = clf.predict(clone)
        assert abs(sum(probs) - 1.0) < 1e-9 and 0 <= label < len(probs)

    print("python smoke test passed")


if __name__ == "__main__":
    main()

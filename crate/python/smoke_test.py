"""End-to-end smoke test for the trex_py extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/trex_py-*.whl
"""

import math
import os
import tempfile

import trex_py


def check_metrics():
    assert trex_py.recall_at_k([0, 1, 2], [0, 3], 3) == 0.5
    assert math.isclose(trex_py.precision_at_k([0, 1, 2], [0, 3], 3), 1 / 3)
    assert trex_py.precision_at_k([0], [0], 2) == 0.5
    top = trex_py.ptop([(0, [3, 1]), (1, [3, 1, 0]), (2, [3])], 2)
    assert [c for c, _ in top] == [3, 1], top


def check_pipeline(tmp):
    ds = trex_py.Dataset.synthetic(60, seed=3, categories=12, archetype="alternating:1")
    assert len(ds) == 60 and ds.num_sessions > 0
    data, vocab = os.path.join(tmp, "data.jsonl"), os.path.join(tmp, "vocab.json")
    ds.save(data, vocab)
    ds = trex_py.Dataset.load(data, vocab)
    assert len(ds) == 60

    config = {
        "embed_dim": 16,
        "num_heads": 2,
        "num_encoder_layers": 1,
        "num_decoder_layers": 1,
        "ffn_dim": 32,
        "n_enc": 16,
        "n_dec": 4,
        "learning_rate": 2e-3,
        "max_epochs": 3,
        "seed": 1,
    }
    ckpt_path = os.path.join(tmp, "model.ckpt")
    ckpt, log = trex_py.train(ds, config, out=ckpt_path)
    assert [e["epoch"] for e in log] == [0, 1, 2, 3]
    assert log[0]["train_loss"] is None
    assert all(math.isfinite(e["val_loss"]) for e in log)
    assert ckpt.config()["embed_dim"] == 16

    reloaded = trex_py.Checkpoint.load(ckpt_path)
    names = reloaded.categories
    history = [(day, [names[c] for c in cats]) for day, cats in ds.history(0)]
    basket = reloaded.predict(history, 4, partial=[names[0]])
    assert len(basket) == 4
    assert names[0] not in [n for n, _ in basket]
    scores = [s for _, s in basket]
    assert scores == sorted(scores, reverse=True)

    model = trex_py.evaluate(ds, reloaded, ks=[2, 3])
    base = trex_py.evaluate(ds, ks=[2, 3])
    assert base["system"] == "ptop" and model["system"] == "trex"
    assert model["customers"] == base["customers"] == 60
    assert [r["k"] for r in model["per_k"]] == [2, 3]

    try:
        trex_py.train(ds, {"no_such_key": 1})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")
    try:
        reloaded.predict(history, 2, partial=["not-a-category"])
    except ValueError:
        pass
    else:
        raise AssertionError("unknown category accepted")
    return model, base


if __name__ == "__main__":
    check_metrics()
    with tempfile.TemporaryDirectory() as tmp:
        model, base = check_pipeline(tmp)
    print(
        "smoke test ok: recall@3 trex %.3f ptop %.3f"
        % (model["per_k"][1]["recall_mean"], base["per_k"][1]["recall_mean"])
    )

"""Smoke test for the sparsevlm Python extension.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or copy
target/release/libsparsevlm_py.so to sparsevlm.so on PYTHONPATH.
"""

import math
import os
import sys
import tempfile

import sparsevlm as sv


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    cfg = sv.Config(overrides={
        "seed": 7,
        "task.samples": 1000,
        "pretrain.epochs": 20,
        "train.lr": 0.03,
    })
    check(cfg.get("prune.pattern") == "2:4", "config defaults")
    try:
        cfg.set("train.lambda", 2)
        check(False, "invalid lambda rejected")
    except ValueError:
        check(cfg.get("train.lambda") == "0.1", "invalid lambda rejected")

    data = sv.Dataset.generate(cfg)
    train, calib, evals = data.split(cfg)
    check(len(data) == 1000 and len(evals) == 500 and len(calib) == 128, "generate and split")

    model = sv.Model(cfg)
    losses = model.pretrain(train, cfg)
    base = model.accuracy(evals)
    check(losses[-1] < losses[0] and base > 0.5, f"pretrain accuracy {base:.3f}")

    pruned = model.copy()
    pruned.prune(cfg, calib)
    check(pruned.sparsity(["vision", "language"]) == 0.5, "2:4 pruning halves vision and language")
    check(pruned.sparsity(["interface"]) == 0.0, "interface untouched")

    tuned = pruned.copy()
    tuned.attach_adapters(cfg)
    steps = tuned.train(train, cfg)
    tuned.merge()
    ok, report = tuned.verify()
    check(ok and tuned.sparsity(["vision", "language"]) == 0.5, "sparse merge keeps the pattern")
    pruned_acc, tuned_acc = pruned.accuracy(evals), tuned.accuracy(evals)
    check(len(steps) > 0 and tuned_acc >= pruned_acc,
          f"restoration {pruned_acc:.3f} -> {tuned_acc:.3f}")

    mask = tuned.mask("lang1")
    weight = tuned.weight("lang1")
    check(all(w == 0.0 for wr, mr in zip(weight, mask) for w, m in zip(wr, mr) if not m),
          "pruned weights are exactly zero")

    dense_cfg = sv.Config(overrides={"seed": 7, "train.mode": "dense", "train.lr": 0.03})
    dense = pruned.copy()
    dense.attach_adapters(dense_cfg)
    dense.train(train.prefix(200), dense_cfg)
    dense.merge()
    check(not dense.verify()[0], "dense merge fails verification")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.svlm")
        tuned.save(path)
        back = sv.Model.load(path)
        check(back == tuned and back.evaluate(evals) == tuned.evaluate(evals), "checkpoint round trip")
        dpath = os.path.join(d, "d.svld")
        data.save(dpath)
        check(sv.Dataset.load(dpath).labels() == data.labels(), "dataset round trip")
        with open(path, "r+b") as f:
            f.write(b"XXXX")
        try:
            sv.Model.load(path)
            check(False, "corrupt checkpoint rejected")
        except OSError:
            check(True, "corrupt checkpoint rejected")

    p = sv.softmax([1.0, 2.0, 3.0])
    check(abs(sum(p) - 1.0) < 1e-12, "softmax")
    check(sv.kl_divergence(p, p) == 0.0, "kl of identical distributions")
    loss, grad = sv.task_loss([0.0, 0.0], 1)
    check(abs(loss - math.log(2)) < 1e-12 and grad == [0.5, -0.5], "task loss")
    check(sv.combine_losses(2.0, 4.0, 0.25) == 3.5, "lambda weighs the task loss")
    grid = sv.enumerate_allocations(1.0, 0.25)
    check([(a, b) for a, b, _ in grid] == [(0, 1), (0.25, 0.75), (0.5, 0.5), (0.75, 0.25), (1, 0)],
          "allocation grid")

    rows = sv.plan(sv.Config(overrides={
        "task.samples": 800, "pretrain.epochs": 5, "plan.seeds": "0,1", "plan.allocations": "0:0,0.5:0.5",
    }))
    check(len(rows) == 2 and rows[0]["per_seed"] and rows[0]["mean"] >= rows[1]["mean"] - 1.0, "plan")
    print("smoke test passed")


if __name__ == "__main__":
    main()

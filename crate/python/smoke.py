"""Smoke test for the dialogctl Python extension.

Build and run from the repository root:

    cargo build --release -p dialogctl-py --features extension-module
    cp target/release/libdialogctl_py.so python/dialogctl_py.so
    python3 python/smoke.py
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dialogctl_py as dc


def main():
    names = dc.action_names()
    assert len(names) == 14, names
    assert dc.corpus_text().count("\nend") >= 20

    report = dc.train_sl(kind="lstm", hidden=32, seed=0)
    assert report["reconstructed"], report
    print(f"train_sl: {report['epochs']} epochs, reconstructed")

    svc = dc.Service()
    sid = svc.create_session()
    r = svc.post_utterance(sid, "Call Jason Williams cellphone")
    print("turn:", [a["text"] for a in r["actions"] if a.get("text")])
    r = svc.post_utterance(sid, "")
    assert r["closed"], r
    assert len(svc.transcript(sid)) == 2

    sid = svc.create_session()
    for text in ["", "hello", "hello"]:
        svc.post_utterance(sid, text)
    before = svc.model_version
    goodbye = names.index("goodbye")
    rep = svc.correct(sid, 2, goodbye)
    assert rep["reconstructed"] and svc.model_version > before, rep
    print(f"correction retrained in {rep['wall_clock_ms']} ms")

    try:
        svc.post_utterance(999999, "hi")
    except KeyError:
        pass
    else:
        raise AssertionError("unknown session accepted")

    job = svc.start_job({"kind": "loo_eval", "sizes": [1], "seed": 0})
    status = svc.wait_job(job)
    assert status["state"] == "finished", status["state"]
    print("loo job events:", len(status["events"]))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        svc.save_checkpoint(path)
        svc.load_checkpoint(path)

    curves = dc.rl_experiment({"n_sl": 5, "n_rl_dialogs": 20, "runs": 2, "eval_every": 10, "eval_dialogs": 20})
    assert curves["checkpoints"] == [0, 10, 20], curves["checkpoints"]
    print("rl mean tcr:", [round(m, 3) for m in curves["mean"]])
    print("smoke OK")


if __name__ == "__main__":
    main()

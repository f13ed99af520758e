#!/usr/bin/env python3
"""Deterministic stand-in for real model/distill/transform/metric plugins.

Speaks the line-delimited JSON plugin protocol on stdin/stdout.

Profiles:
  audio  transcriber model, amplitude and output_length distills,
         white_noise transform, exact_match metric
  sleep  `constant` model plus N independent distills that sleep per batch

Instance files (audio profile) are small text files:
    amplitude 0.0731
    noise 0
    transcript the quick brown fox
"""
import argparse
import hashlib
import json
import os
import re
import sys
import time


def parse_args():
    p = argparse.ArgumentParser()
    p.add_argument("--profile", default="audio", choices=["audio", "sleep"])
    p.add_argument("--version", default="1")
    p.add_argument("--sleep-ms", type=int, default=0)
    p.add_argument("--sleepers", type=int, default=4)
    p.add_argument("--fail-model", action="append", default=[])
    p.add_argument("--log", default=None, help="append one JSON line per run frame")
    p.add_argument("--batch-size", type=int, default=None)
    return p.parse_args()


ARGS = parse_args()


def manifest():
    v = ARGS.version
    hint = {"batch_size_hint": ARGS.batch_size} if ARGS.batch_size else {}
    if ARGS.profile == "sleep":
        fns = [{"name": "constant", "kind": "model", "version": v}]
        for i in range(ARGS.sleepers):
            fns.append({"name": f"sleep_{i}", "kind": "distill", "version": v,
                        "depends_on_model": False, "output_dtype": "continuous"})
        return fns
    return [
        dict({"name": "transcriber", "kind": "model", "version": v}, **hint),
        dict({"name": "amplitude", "kind": "distill", "version": v,
              "depends_on_model": False, "output_dtype": "continuous"}, **hint),
        dict({"name": "output_length", "kind": "distill", "version": v,
              "depends_on_model": True, "output_dtype": "continuous"}, **hint),
        dict({"name": "white_noise", "kind": "transform", "version": v}, **hint),
        {"name": "exact_match", "kind": "metric", "version": v},
    ]


def read_instance(options, row):
    path = os.path.join(options["data_path"], row["file"])
    fields = {}
    with open(path) as f:
        for line in f:
            key, _, value = line.rstrip("\n").partition(" ")
            fields[key] = value
    return {
        "amplitude": float(fields.get("amplitude", "0")),
        "noise": float(fields.get("noise", "0")),
        "transcript": fields.get("transcript", ""),
    }


def unit(*parts):
    h = hashlib.sha256("|".join(parts).encode()).hexdigest()
    return int(h[:8], 16) / 2**32


def model_quality(model):
    m = re.search(r"(\d+)$", model)
    n = int(m.group(1)) if m else 1
    return 0.4 / max(n, 1)


def transcribe(options, row):
    model = options.get("model") or ""
    preset = row.get("raw::pred_" + model)
    if preset is not None:
        return preset
    inst = read_instance(options, row)
    p = model_quality(model) + (0.3 if inst["amplitude"] < 0.04 else 0.0) + 0.5 * inst["noise"]
    truth = inst["transcript"]
    if unit(model, row["id"], options.get("transform") or "none") < p:
        words = truth.split()
        return " ".join(words[:-1])
    return truth


def white_noise(options, row):
    inst = read_instance(options, row)
    name = os.path.basename(row["file"])
    out = os.path.join(options["output_dir"], name)
    with open(out, "w") as f:
        f.write("amplitude %.6f\n" % (inst["amplitude"] + 0.02))
        f.write("noise %.6f\n" % (inst["noise"] + 0.3))
        f.write("transcript %s\n" % inst["transcript"])
    return name


def handle(frame):
    fn = frame["function"]
    options = frame["options"]
    rows = frame["rows"]
    task_id = frame["task_id"]
    if ARGS.log:
        with open(ARGS.log, "a") as f:
            f.write(json.dumps({"function": fn, "model": options.get("model"),
                                "transform": options.get("transform"), "rows": len(rows)}) + "\n")
    if fn.startswith("sleep_"):
        time.sleep(ARGS.sleep_ms / 1000.0)
        return {"values": [1.0 for _ in rows]}
    if ARGS.sleep_ms:
        time.sleep(ARGS.sleep_ms / 1000.0)
    if fn == "constant":
        return {"values": ["x" for _ in rows]}
    if fn == "transcriber":
        if options.get("model") in ARGS.fail_model:
            raise RuntimeError("model %s failed to load weights" % options["model"])
        return {"values": [transcribe(options, r) for r in rows]}
    if fn == "amplitude":
        return {"values": [read_instance(options, r)["amplitude"] for r in rows]}
    if fn == "output_length":
        col = options["output_column"]
        return {"values": [None if r.get(col) is None else len(str(r[col]).split()) for r in rows]}
    if fn == "white_noise":
        return {"files": [white_noise(options, r) for r in rows]}
    if fn == "exact_match":
        out, label = options["output_column"], options["label_column"]
        scored = [r for r in rows if r.get(out) is not None and r.get(label) is not None]
        if not scored:
            return {"scalar": None}
        return {"scalar": sum(r[out] == r[label] for r in scored) / len(scored)}
    raise KeyError("unknown function %s" % fn)


def send(obj):
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def main():
    for line in sys.stdin:
        if not line.strip():
            continue
        frame = json.loads(line)
        kind = frame.get("type")
        if kind == "hello":
            send({"type": "manifest", "protocol": 1, "functions": manifest()})
        elif kind == "run":
            try:
                body = handle(frame)
            except Exception as e:  # reported to the host as an error frame
                print("error in %s: %s" % (frame.get("function"), e), file=sys.stderr)
                send({"type": "error", "task_id": frame["task_id"], "message": str(e)})
                continue
            send(dict({"type": "result", "task_id": frame["task_id"]}, **body))


if __name__ == "__main__":
    main()

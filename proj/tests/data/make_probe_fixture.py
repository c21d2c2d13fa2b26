"""Writes portable weight files with embedded probes, evaluated in float32
the way a framework checkpoint would be. Regenerate with

    python3 tests/data/make_probe_fixture.py
"""
import json
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).parent


def forward(layers, x):
    h = x.astype(np.float32)
    for w, b, act in layers:
        h = h @ w.T + b
        if act == "tanh":
            h = np.tanh(h)
        elif act == "relu":
            h = np.maximum(h, np.float32(0))
    return h


def build(rng, widths, hidden):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = (rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)).astype(np.float32)
        b = (0.1 * rng.standard_normal(n_out)).astype(np.float32)
        act = "linear" if i == len(widths) - 2 else hidden
        layers.append((w, b, act))
    return layers


def document(layers, role, obs, out, extra):
    doc = {"format": "calfw-portable-network", "version": 1, "role": role,
           "obs_dim": int(layers[0][0].shape[1]), "out_dim": int(layers[-1][0].shape[0])}
    doc.update(extra)
    doc["layers"] = [{"in": int(w.shape[1]), "out": int(w.shape[0]), "activation": act,
                      "weights": [float(v) for v in w.reshape(-1)],
                      "bias": [float(v) for v in b]} for w, b, act in layers]
    doc["probes"] = [{"input": [float(v) for v in o], "output": [float(v) for v in y]}
                     for o, y in zip(obs, out)]
    return doc


def main():
    rng = np.random.default_rng(20240611)
    theta = rng.uniform(-np.pi, np.pi, 100)
    omega = rng.uniform(-8, 8, 100)
    obs = np.stack([np.cos(theta), np.sin(theta), omega], 1).astype(np.float32)

    policy = build(rng, [3, 64, 64, 1], "tanh")
    raw = forward(policy, obs)
    low, high = np.float32(-2), np.float32(2)
    act = low + (np.tanh(raw) + np.float32(1)) * np.float32(0.5) * (high - low)
    doc = document(policy, "policy-mean", obs, act,
                   {"action_low": [-2.0], "action_high": [2.0], "action_transform": "tanh_scale"})
    (HERE / "probe_policy.json").write_text(json.dumps(doc) + "\n")

    value = build(rng, [3, 32, 32, 1], "relu")
    doc = document(value, "value", obs, forward(value, obs), {})
    (HERE / "probe_value.json").write_text(json.dumps(doc) + "\n")


if __name__ == "__main__":
    main()

"""Train the pinned desk-scale MLP on the scikit-learn digits set.

Run once; the outputs under data/digits/ are committed and every test pins
against them. Re-running reproduces them bit-for-bit on the same numpy build.

    python3 scripts/train_desk_mlp.py data/digits
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

SEED = 20240917
HIDDEN = 64
N_TEST = 500


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    pixels = np.rint(digits.images * 255.0 / 16.0).astype(np.uint8)
    labels = digits.target.astype(np.uint8)

    rng = np.random.default_rng(SEED)
    order = rng.permutation(len(labels))
    test_idx, train_idx = order[:N_TEST], order[N_TEST:]

    write_idx_images(out / "digits-train-images-idx3-ubyte", pixels[train_idx])
    write_idx_labels(out / "digits-train-labels-idx1-ubyte", labels[train_idx])
    write_idx_images(out / "digits-test-images-idx3-ubyte", pixels[test_idx])
    write_idx_labels(out / "digits-test-labels-idx1-ubyte", labels[test_idx])

    x = pixels[train_idx].reshape(len(train_idx), -1).astype(np.float64) / 255.0
    y = labels[train_idx].astype(np.int64)

    w1 = rng.normal(0.0, np.sqrt(2.0 / 64), size=(HIDDEN, 64))
    b1 = np.zeros(HIDDEN)
    w2 = rng.normal(0.0, np.sqrt(2.0 / HIDDEN), size=(10, HIDDEN))
    b2 = np.zeros(10)

    lr, epochs, batch = 0.1, 60, 32
    for _ in range(epochs):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), batch):
            idx = perm[start:start + batch]
            xb, yb = x[idx], y[idx]
            h_pre = xb @ w1.T + b1
            h = np.maximum(h_pre, 0.0)
            logits = h @ w2.T + b2
            logits -= logits.max(axis=1, keepdims=True)
            prob = np.exp(logits)
            prob /= prob.sum(axis=1, keepdims=True)
            prob[np.arange(len(yb)), yb] -= 1.0
            g_logits = prob / len(yb)
            g_w2 = g_logits.T @ h
            g_b2 = g_logits.sum(axis=0)
            g_h = g_logits @ w2
            g_h[h_pre <= 0.0] = 0.0
            g_w1 = g_h.T @ xb
            g_b1 = g_h.sum(axis=0)
            w1 -= lr * g_w1
            b1 -= lr * g_b1
            w2 -= lr * g_w2
            b2 -= lr * g_b2

    model = {
        "input_shape": [1, 8, 8],
        "layers": [
            {"type": "dense", "in": 64, "out": HIDDEN, "activation": "relu"},
            {"type": "dense", "in": HIDDEN, "out": 10, "activation": "none"},
        ],
    }
    (out / "model.json").write_text(json.dumps(model, indent=2) + "\n")
    blob = b"".join(
        np.ascontiguousarray(t, dtype="<f8").tobytes() for t in (w1, b1, w2, b2)
    )
    (out / "weights.bin").write_bytes(blob)

    xt = pixels[test_idx].reshape(N_TEST, -1).astype(np.float64) / 255.0
    pred = (np.maximum(xt @ w1.T + b1, 0.0) @ w2.T + b2).argmax(axis=1)
    print("test accuracy", (pred == labels[test_idx]).mean())


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/digits")

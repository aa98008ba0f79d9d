"""Scalar-loop reference forward pass for the desk MLP.

Writes the logits of the first N test images as IEEE-754 bit patterns so the
Rust engine can be checked bit-for-bit. Plain Python floats, no numpy, one
multiply-add at a time in ascending index order, bias added last.

    python3 scripts/golden_logits.py data/digits crates/core/tests/data/golden_logits.json
"""
import json
import struct
import sys
from pathlib import Path

N = 8


def main(data_dir, out_path):
    d = Path(data_dir)
    model = json.loads((d / "model.json").read_text())
    raw = (d / "weights.bin").read_bytes()
    params = list(struct.unpack("<%dd" % (len(raw) // 8), raw))
    layers, off = [], 0
    for l in model["layers"]:
        n_in, n_out = l["in"], l["out"]
        w = [params[off + o * n_in: off + (o + 1) * n_in] for o in range(n_out)]
        off += n_in * n_out
        b = params[off: off + n_out]
        off += n_out
        layers.append((w, b, l["activation"]))
    assert off == len(params)

    img = (d / "digits-test-images-idx3-ubyte").read_bytes()
    n, rows, cols = struct.unpack(">III", img[4:16])
    px = rows * cols
    cases = []
    for s in range(N):
        x = [v / 255.0 for v in img[16 + s * px: 16 + (s + 1) * px]]
        for w, b, act in layers:
            y = []
            for o in range(len(b)):
                acc = 0.0
                for i in range(len(x)):
                    acc += w[o][i] * x[i]
                acc += b[o]
                if act == "relu":
                    acc = acc if acc > 0.0 else 0.0
                y.append(acc)
            x = y
        cases.append({
            "sample": s,
            "logits_bits": ["%016x" % struct.unpack("<Q", struct.pack("<d", v))[0] for v in x],
        })
    Path(out_path).write_text(json.dumps({"cases": cases}, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

"""Regenerates golden_logprob.csv from golden_flow.json with an independent
numpy evaluation of the inverse flow and the l1 gamma-mixture base."""
import json
import math
import pathlib

import numpy as np
from scipy import special, stats

HERE = pathlib.Path(__file__).parent


def tensor(t):
    return np.array(t["data"], dtype=float).reshape(t["shape"])


def lu_parts(layer):
    d = layer["dim"]
    log_diag = np.clip(np.array(layer["log_diag"]), -10.0, 10.0)
    diag = np.array(layer["sign"]) * np.exp(log_diag)
    upper = np.diag(diag)
    lower = np.eye(d)
    if not layer["diagonal_only"]:
        upper = upper + np.triu(tensor(layer["upper"]), 1)
        lower = lower + np.tril(tensor(layer["lower"]), -1)
    return lower, upper, np.array(layer["bias"]), log_diag.sum()


def lu_forward(layer, x):
    lower, upper, bias, _ = lu_parts(layer)
    return lower @ upper @ x + bias


def lu_inverse(layer, y):
    lower, upper, bias, _ = lu_parts(layer)
    return np.linalg.solve(lower @ upper, y - bias)


def shift(coupling, h):
    mask = np.array(coupling["mask"])
    a = mask * h
    layers = coupling["conditioner"]["layers"]
    for i, l in enumerate(layers):
        a = tensor(l["weight"]) @ a + np.array(l["bias"])
        if i + 1 < len(layers):
            a = np.maximum(a, 0.0)
    return (1.0 - mask) * a


def inverse(flow, x):
    layers = flow["layers"]
    log_det = 0.0
    h = np.array(x, dtype=float)
    if layers and layers[-1]["type"] == "final-affine":
        fin = layers[-1]["affine"]
        h = lu_inverse(fin, h)
        log_det = lu_parts(fin)[3]
        layers = layers[:-1]
    blocks = []
    i = 0
    while i < len(layers):
        if layers[i]["type"] == "lu-affine":
            blocks.append((layers[i], layers[i + 1]))
            i += 2
        else:
            blocks.append((None, layers[i]))
            i += 1
    for affine, coupling in reversed(blocks):
        if affine is not None:
            h = lu_forward(affine, h)
        h = h - shift(coupling, h)
        if affine is not None:
            h = lu_inverse(affine, h)
    return h, log_det


def base_log_density(base, z):
    d = base["dim"]
    norm = base["norm"]
    assert base["order"] == "1" and norm["kind"] == "gamma-mixture"
    raw = np.array(norm["raw"])
    m = len(raw) // 3
    weights = special.softmax(raw[:m])
    shapes = norm["shape_cap"] * special.expit(raw[m:2 * m])
    scales = np.exp(raw[2 * m:])
    r = np.abs(z).sum()
    rho = sum(w * stats.gamma.pdf(r, a, scale=s) for w, a, s in zip(weights, shapes, scales))
    # derivative of the l1 ball volume (2r)^d / d!
    dv = 2.0 ** d * r ** (d - 1) / math.factorial(d - 1)
    return math.log(rho) - math.log(dv)


def main():
    flow = json.loads((HERE / "golden_flow.json").read_text())
    rng = np.random.default_rng(12345)
    points = rng.normal(0.0, 1.0, size=(10, 2))
    lines = ["x0,x1,log_prob"]
    for x in points:
        z, log_det = inverse(flow, x)
        lp = base_log_density(flow["base"], z) - log_det
        lines.append(f"{float(x[0])!r},{float(x[1])!r},{float(lp)!r}")
    (HERE / "golden_logprob.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()

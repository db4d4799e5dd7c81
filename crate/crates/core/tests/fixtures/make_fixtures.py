"""Regenerates the reference fixtures used by tests/accelerator.rs.

cnn9.pgwt / cnn9_io.bin: random CNN weights and a torch (float32) forward
pass at n_px = 9. db3_33.bin: PyWavelets 3-level symmetric db3 of a random
33x33 image.
"""
import struct
from pathlib import Path

import numpy as np
import pywt
import torch
import torch.nn.functional as F

HERE = Path(__file__).parent
N = 9


def cnn_specs():
    specs = []
    plan = [(2, 8), (8, 16), (16, 32)]
    for l, (ci, co) in enumerate(plan):
        specs += [(f"enc_u.{l}.weight", [co, ci, 3, 3]), (f"enc_u.{l}.bias", [co])]
    for l, (ci, co) in enumerate(plan):
        specs.append((f"enc_s.{l}.weight", [co, ci, 3, 3]))
    specs += [
        ("dec.0.weight", [16, 32, 5, 5]), ("dec.0.bias", [16]),
        ("dec.1.weight", [8, 16, 5, 5]), ("dec.1.bias", [8]),
        ("dec.2.weight", [2, 8, 1, 1]), ("dec.3.weight", [2, 2, 5, 5]),
        ("lop.weight", [2, 2, 5, 5]),
    ]
    return specs


def write_pgwt(path, arch, k, bounds, tensors):
    out = bytearray(b"PGWT")
    out += struct.pack("<IBIddI", 1, arch, k, bounds[0], bounds[1], len(tensors))
    for name, t in tensors:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", 0, t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.astype("<f4").tobytes()
    path.write_bytes(bytes(out))


def cnn_forward(w, x):
    u, s = x[:, :2], x[:, 2:]
    sizes = [u.shape[-2:]]
    eu, es = u, s
    for l in range(3):
        eu = F.relu(F.conv2d(eu, w[f"enc_u.{l}.weight"], w[f"enc_u.{l}.bias"], stride=2, padding=1))
        es = F.relu(F.conv2d(es, w[f"enc_s.{l}.weight"], None, stride=2, padding=1))
        sizes.append(eu.shape[-2:])
    z = eu + es
    for l in range(2):
        z = F.interpolate(z, size=tuple(sizes[2 - l]), mode="nearest")
        z = F.relu(F.conv2d(z, w[f"dec.{l}.weight"], w[f"dec.{l}.bias"], padding=2))
    z = F.interpolate(z, size=tuple(sizes[0]), mode="nearest")
    z = F.relu(F.conv2d(z, w["dec.2.weight"]))
    g = F.conv2d(z, w["dec.3.weight"], padding=2)
    ls = F.conv2d(s, w["lop.weight"], padding=2)
    return g, ls, F.relu(u + ls * g)


def main():
    rng = np.random.default_rng(20240611)
    tensors = []
    for name, dims in cnn_specs():
        fan_in = int(np.prod(dims[1:])) if len(dims) > 1 else 10
        tensors.append((name, (rng.uniform(-1, 1, dims) / np.sqrt(fan_in)).astype(np.float32)))
    write_pgwt(HERE / "cnn9.pgwt", 0, 0, (1.0e6, 0.2), tensors)
    w = {n: torch.from_numpy(t) for n, t in tensors}
    x = np.zeros((1, 4, N, N))
    x[0, :2] = rng.uniform(0, 1, (2, N, N))
    x[0, 2:] = rng.uniform(-0.2, 0.2, (2, N, N))
    with torch.no_grad():
        g, ls, ut = cnn_forward(w, torch.from_numpy(x.astype(np.float32)))
    blob = np.concatenate([x.ravel(), g.double().numpy().ravel(), ls.double().numpy().ravel(), ut.double().numpy().ravel()])
    (HERE / "cnn9_io.bin").write_bytes(blob.astype("<f8").tobytes())

    img = rng.normal(size=(33, 33))
    coeffs = pywt.wavedec2(img, "db3", mode="symmetric", level=3)
    parts = [img.ravel(), coeffs[0].ravel()]
    for d in coeffs[1:]:
        parts += [c.ravel() for c in d]
    (HERE / "db3_33.bin").write_bytes(np.concatenate(parts).astype("<f8").tobytes())


if __name__ == "__main__":
    main()

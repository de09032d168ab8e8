"""On-disk formats: headered CSV with round-trip floats, sorted JSON, JSONL logs."""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from .exceptions import ArtifactMismatchError


def fmt(v):
    # repr of a Python float is the shortest string that round-trips
    return repr(float(v))


def write_csv(path, header, columns):
    cols = [np.asarray(c).ravel() for c in columns]
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError(f"columns of unequal length: {sorted(n)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """``(header, array)`` with one column per header field."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ArtifactMismatchError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return header, data


def write_matrix_csv(path, mat):
    mat = np.asarray(mat, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{j}" for j in range(mat.shape[1])])
        for row in mat:
            w.writerow([fmt(v) for v in row])


def read_matrix_csv(path):
    return read_csv(path)[1]


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ArtifactMismatchError(f"missing artifact {path}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactMismatchError(f"corrupt JSON in {path}: {exc}") from None


class JsonlLog:
    """Append-only JSON-lines log."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def __call__(self, rec):
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def file_table(root, paths):
    """``{relative path: sha256}`` for files under ``root``."""
    return {os.path.relpath(p, root): sha256_file(p) for p in sorted(paths)}


def verify_files(root, table):
    """Raise if any listed file is missing or its checksum differs."""
    for rel, digest in sorted(table.items()):
        p = os.path.join(root, rel)
        if not os.path.exists(p):
            raise ArtifactMismatchError(f"missing artifact {p}")
        got = sha256_file(p)
        if got != digest:
            raise ArtifactMismatchError(f"checksum mismatch for {p}: manifest {digest[:12]}, file {got[:12]}")

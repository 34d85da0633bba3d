"""On-disk formats: corpora, features, vocabularies, checkpoints, lock files.

Feature file (little-endian)::

    b"PVC1" | u32 count | u32 dim | count*dim float64, row-major

Checkpoint = ``<stem>.manifest`` (text) + ``<stem>.bin`` (float64 LE values of
each array, in manifest order).  The manifest carries the payload's SHA-256,
which is re-checked on load.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .vocab import Vocab

FEATURE_MAGIC = b"PVC1"
CKPT_MAGIC = "PVCK"
CKPT_VERSION = 1


class FormatError(ValueError):
    """A file exists but its content does not follow the expected format."""


def _write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_text(path, text: str) -> None:
    _write_bytes(Path(path), text.encode("utf-8"))


def read_text(path) -> str:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    try:
        return path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8 ({exc})") from None


# -- corpora ---------------------------------------------------------------------

def write_corpus(path, sentences: Iterable[Sequence[str]]) -> None:
    lines = []
    for s in sentences:
        if any((not t) or any(ch.isspace() for ch in t) for t in s):
            raise ValueError(f"{path}: tokens must be non-empty and contain no whitespace")
        lines.append(" ".join(s) + "\n")
    write_text(path, "".join(lines))


def read_corpus(path) -> list[list[str]]:
    text = read_text(path)
    if text and not text.endswith("\n"):
        raise FormatError(f"{path}: last line is not newline-terminated (truncated file?)")
    return [line.split(" ") if line else [] for line in text.split("\n")[:-1]]


def write_parallel(stem, src, tgt) -> None:
    if len(src) != len(tgt):
        raise ValueError(f"parallel corpus sides differ: {len(src)} vs {len(tgt)} sentences")
    write_corpus(f"{stem}.src", src)
    write_corpus(f"{stem}.tgt", tgt)


def read_parallel(stem) -> tuple[list[list[str]], list[list[str]]]:
    src, tgt = read_corpus(f"{stem}.src"), read_corpus(f"{stem}.tgt")
    if len(src) != len(tgt):
        raise FormatError(f"line-count mismatch: {stem}.src has {len(src)} lines, "
                          f"{stem}.tgt has {len(tgt)} lines")
    return src, tgt


def write_refs(stem, refs: Sequence[Sequence[Sequence[str]]]) -> None:
    """One file per reference index: ``<stem>.ref0`` ... ``<stem>.ref{R-1}``."""
    n_refs = {len(r) for r in refs}
    if len(n_refs) > 1:
        raise ValueError("every item needs the same number of references")
    for j in range(n_refs.pop() if n_refs else 0):
        write_corpus(f"{stem}.ref{j}", [r[j] for r in refs])


def read_refs(stem, n_refs: int) -> list[list[list[str]]]:
    files = [read_corpus(f"{stem}.ref{j}") for j in range(n_refs)]
    counts = {len(f) for f in files}
    if len(counts) > 1:
        raise FormatError(f"line-count mismatch across {stem}.ref0..ref{n_refs - 1}: "
                          + ", ".join(str(len(f)) for f in files))
    return [list(item) for item in zip(*files)]


# -- features --------------------------------------------------------------------

def encode_features(feats: np.ndarray) -> bytes:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {feats.shape}")
    return FEATURE_MAGIC + struct.pack("<II", *feats.shape) + feats.astype("<f8").tobytes()


def decode_features(data: bytes, where: str = "<bytes>") -> np.ndarray:
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{where}: bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(data) < 12:
        raise FormatError(f"{where}: truncated header")
    count, dim = struct.unpack("<II", data[4:12])
    need = 12 + 8 * count * dim
    if len(data) != need:
        kind = "truncated payload" if len(data) < need else "trailing bytes"
        raise FormatError(f"{where}: {kind}: expected {need} bytes for {count}x{dim}, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(count, dim).astype(np.float64)


def write_features(path, feats: np.ndarray) -> None:
    _write_bytes(Path(path), encode_features(feats))


def read_features(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing feature file: {path}")
    return decode_features(path.read_bytes(), str(path))


def write_index(path, scene_ids: Sequence[int]) -> None:
    write_text(path, "".join(f"{int(s)}\n" for s in scene_ids))


def read_index(path) -> list[int]:
    out = []
    for k, line in enumerate(read_text(path).splitlines()):
        try:
            out.append(int(line))
        except ValueError:
            raise FormatError(f"{path}:{k + 1}: expected an integer scene id, got {line!r}") from None
    return out


def write_vocab(path, vocab: Vocab) -> None:
    write_text(path, "".join(line + "\n" for line in vocab.to_lines()))


def read_vocab(path) -> Vocab:
    try:
        return Vocab.from_lines(read_text(path).splitlines())
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed vocabulary ({exc})") from None


# -- checkpoints -----------------------------------------------------------------

def _shape_str(shape) -> str:
    return "x".join(str(int(n)) for n in shape) if len(shape) else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "-" else tuple(int(n) for n in text.split("x"))


def checkpoint_bytes(arrays: dict[str, np.ndarray], meta: dict, config_hash: str,
                     step: int = 0) -> tuple[str, bytes]:
    """(manifest text, payload bytes) for ``arrays`` in insertion order."""
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}", f"config_hash {config_hash}", f"step {int(step)}",
             f"payload_sha256 {hashlib.sha256(payload).hexdigest()}"]
    for key in sorted(meta):
        lines.append(f"meta {key} {json.dumps(meta[key], sort_keys=True)}")
    for name, a in arrays.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        lines.append(f"param {name} {_shape_str(np.shape(a))}")
    return "".join(line + "\n" for line in lines), payload


def save_checkpoint(stem, arrays: dict[str, np.ndarray], meta: dict | None = None,
                    config_hash: str = "", step: int = 0) -> None:
    manifest, payload = checkpoint_bytes(arrays, meta or {}, config_hash, step)
    _write_bytes(Path(f"{stem}.bin"), payload)
    write_text(f"{stem}.manifest", manifest)


class Checkpoint:
    def __init__(self, arrays: dict[str, np.ndarray], meta: dict, config_hash: str, step: int):
        self.arrays, self.meta, self.config_hash, self.step = arrays, meta, config_hash, step


def load_checkpoint(stem, expect_hash: str | None = None) -> Checkpoint:
    mpath, bpath = Path(f"{stem}.manifest"), Path(f"{stem}.bin")
    lines = read_text(mpath).splitlines()
    if not lines or lines[0] != f"{CKPT_MAGIC} {CKPT_VERSION}":
        raise FormatError(f"{mpath}: not a version-{CKPT_VERSION} checkpoint manifest")
    head: dict[str, str] = {}
    meta: dict = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(" ", 2)
        try:
            if parts[0] == "meta":
                meta[parts[1]] = json.loads(parts[2])
            elif parts[0] == "param":
                shapes.append((parts[1], _parse_shape(parts[2])))
            else:
                head[parts[0]] = parts[1] if len(parts) > 1 else ""
        except (IndexError, ValueError):
            raise FormatError(f"{mpath}:{k}: malformed manifest line {line!r}") from None
    for key in ("config_hash", "step", "payload_sha256"):
        if key not in head:
            raise FormatError(f"{mpath}: manifest lacks {key!r}")
    if not bpath.is_file():
        raise FileNotFoundError(f"missing checkpoint payload: {bpath}")
    payload = bpath.read_bytes()
    need = 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(payload) != need:
        raise FormatError(f"{bpath}: payload is {len(payload)} bytes, manifest implies {need}")
    if hashlib.sha256(payload).hexdigest() != head["payload_sha256"]:
        raise FormatError(f"{bpath}: payload hash does not match {mpath}")
    if expect_hash is not None and head["config_hash"] != expect_hash:
        raise FormatError(f"{mpath}: config hash {head['config_hash']} does not match "
                          f"the active config ({expect_hash})")
    arrays, offset = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    return Checkpoint(arrays, meta, head["config_hash"], int(head["step"]))


# -- lock ------------------------------------------------------------------------

class RunLock:
    """Exclusive ownership of an output directory for the life of a CLI run."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"output directory is locked by another run: {self.path} "
                               "(remove it if no run is active)") from None
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        return self

    def __exit__(self, *exc) -> None:
        self.path.unlink(missing_ok=True)

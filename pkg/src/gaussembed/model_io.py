"""Model serialization: a greppable text format and a compact binary format.

Both carry the same fields — header (version, word count, dimension,
covariance kind, both biases) and one record per word (the word string, its
mean vector, its sigma) — and round-trip bit-exactly.  Loaders validate
greedily and raise :class:`ModelFormatError` naming the offending line or
byte offset; a truncated or mutated file must never escape as an unrelated
exception.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .corpus import WordIndex
from .training import EmbeddingMatrix

TEXT_MAGIC = "#gauss-embed v1"
BINARY_MAGIC = b"#gauss-embed-bin v1\n"
FORMATS = ("text", "binary")

# Upper bound on a serialized word; keeps fuzz-mutated length prefixes from
# triggering giant allocations.
_MAX_WORD_BYTES = 65536


class ModelFormatError(ValueError):
    """Raised for any malformed model file; carries a location when known."""

    def __init__(self, path, message: str, *, line: int | None = None,
                 offset: int | None = None):
        where = str(path)
        if line is not None:
            where += f":{line}"
        elif offset is not None:
            where += f" @byte {offset}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
        self.offset = offset


def _words_of(words) -> tuple[str, ...]:
    if isinstance(words, WordIndex):
        return words.words
    return tuple(words)


def save_model(params: EmbeddingMatrix, words, path, fmt: str = "text") -> None:
    """Write the model to ``path`` in the chosen format.

    ``words`` is a :class:`WordIndex` or a sequence of strings, one per
    parameter row.  Text floats are printed with 17 significant digits so
    they reload bit-exactly.
    """
    words = _words_of(words)
    if len(words) != params.n_rows:
        raise ValueError(
            f"{len(words)} words for {params.n_rows} parameter rows"
        )
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if fmt == "text":
        _save_text(params, words, path)
    else:
        _save_binary(params, words, path)


def _save_text(params: EmbeddingMatrix, words, path) -> None:
    v, d = params.n_rows, params.dim
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{TEXT_MAGIC} V={v} D={d} cov=spherical "
            f"b1={params.bias1:.17g} b2={params.bias2:.17g}\n"
        )
        for i, word in enumerate(words):
            if any(ch.isspace() for ch in word):
                raise ValueError(f"word {word!r} contains whitespace")
            floats = " ".join(f"{x:.17g}" for x in params.means[i])
            fh.write(f"{word} {floats} {params.sigmas[i]:.17g}\n")


def _save_binary(params: EmbeddingMatrix, words, path) -> None:
    v, d = params.n_rows, params.dim
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<qq", v, d))
        kind = b"spherical"
        fh.write(struct.pack("<I", len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<dd", params.bias1, params.bias2))
        for i, word in enumerate(words):
            data = word.encode("utf-8")
            fh.write(struct.pack("<I", len(data)))
            fh.write(data)
            fh.write(np.ascontiguousarray(params.means[i], dtype="<f8").tobytes())
            fh.write(struct.pack("<d", params.sigmas[i]))


def load_model(path) -> tuple[EmbeddingMatrix, WordIndex]:
    """Load a model saved by :func:`save_model`, sniffing the format."""
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_text(path)


def _parse_header_field(path, token: str, key: str, lineno: int = 1) -> str:
    if not token.startswith(key + "="):
        raise ModelFormatError(path, f"expected {key}=... in header", line=lineno)
    return token[len(key) + 1:]


def _load_text(path) -> tuple[EmbeddingMatrix, WordIndex]:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split(" ")
        if len(parts) != 7 or " ".join(parts[:2]) != TEXT_MAGIC:
            raise ModelFormatError(
                path, f"unrecognized header or version: {header!r}", line=1
            )
        try:
            v = int(_parse_header_field(path, parts[2], "V"))
            d = int(_parse_header_field(path, parts[3], "D"))
            cov = _parse_header_field(path, parts[4], "cov")
            bias1 = float(_parse_header_field(path, parts[5], "b1"))
            bias2 = float(_parse_header_field(path, parts[6], "b2"))
        except ValueError as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(path, f"bad header value: {header!r}", line=1) from None
        if cov != "spherical":
            raise ModelFormatError(path, f"unsupported covariance kind {cov!r}", line=1)
        if v < 1 or d < 1:
            raise ModelFormatError(path, f"bad dimensions V={v} D={d}", line=1)
        if not (math.isfinite(bias1) and math.isfinite(bias2)):
            raise ModelFormatError(path, "non-finite bias in header", line=1)
        means = np.empty((v, d))
        sigmas = np.empty(v)
        words: list[str] = []
        for i in range(v):
            line = fh.readline()
            lineno = i + 2
            if not line:
                raise ModelFormatError(
                    path, f"truncated: expected {v} records, found {i}", line=lineno
                )
            fields = line.split()
            if len(fields) != d + 2:
                raise ModelFormatError(
                    path, f"expected {d + 2} fields, found {len(fields)}", line=lineno
                )
            word = fields[0]
            try:
                row = np.asarray([float(x) for x in fields[1:]], dtype=np.float64)
            except ValueError:
                raise ModelFormatError(
                    path, "unparseable float", line=lineno
                ) from None
            if not np.all(np.isfinite(row)):
                raise ModelFormatError(
                    path, f"non-finite value in record for {word!r}", line=lineno
                )
            if row[-1] <= 0:
                raise ModelFormatError(
                    path, f"sigma must be positive for word {word!r}", line=lineno
                )
            words.append(word)
            means[i] = row[:-1]
            sigmas[i] = row[-1]
        if fh.readline():
            raise ModelFormatError(
                path, f"trailing data after {v} records", line=v + 2
            )
    return _finish_load(path, means, sigmas, bias1, bias2, words)


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError(
            path, f"truncated while reading {what}", offset=fh.tell()
        )
    return data


def _load_binary(path) -> tuple[EmbeddingMatrix, WordIndex]:
    size = Path(path).stat().st_size
    with open(path, "rb") as fh:
        _read_exact(fh, len(BINARY_MAGIC), path, "magic")
        v, d = struct.unpack("<qq", _read_exact(fh, 16, path, "dimensions"))
        if v < 1 or d < 1:
            raise ModelFormatError(path, f"bad dimensions V={v} D={d}", offset=fh.tell())
        (kind_len,) = struct.unpack("<I", _read_exact(fh, 4, path, "covariance kind"))
        if kind_len > _MAX_WORD_BYTES:
            raise ModelFormatError(path, "absurd covariance-kind length", offset=fh.tell())
        kind = _read_exact(fh, kind_len, path, "covariance kind")
        if kind != b"spherical":
            raise ModelFormatError(
                path, f"unsupported covariance kind {kind!r}", offset=fh.tell()
            )
        bias1, bias2 = struct.unpack("<dd", _read_exact(fh, 16, path, "biases"))
        if not (math.isfinite(bias1) and math.isfinite(bias2)):
            raise ModelFormatError(path, "non-finite bias in header", offset=fh.tell())
        # Each record needs at least its length prefix plus d+1 doubles.
        if size - fh.tell() < v * (4 + 8 * (d + 1)):
            raise ModelFormatError(
                path, f"file too short for {v} records of dimension {d}",
                offset=fh.tell(),
            )
        means = np.empty((v, d))
        sigmas = np.empty(v)
        words: list[str] = []
        for i in range(v):
            (wlen,) = struct.unpack("<I", _read_exact(fh, 4, path, "word length"))
            if wlen > _MAX_WORD_BYTES:
                raise ModelFormatError(
                    path, f"absurd word length {wlen}", offset=fh.tell()
                )
            raw = _read_exact(fh, wlen, path, "word")
            try:
                word = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise ModelFormatError(
                    path, "word is not valid UTF-8", offset=fh.tell()
                ) from None
            vec = np.frombuffer(
                _read_exact(fh, 8 * (d + 1), path, f"record for {word!r}"), dtype="<f8"
            )
            if not np.all(np.isfinite(vec)):
                raise ModelFormatError(
                    path, f"non-finite value in record for {word!r}", offset=fh.tell()
                )
            if vec[-1] <= 0:
                raise ModelFormatError(
                    path, f"sigma must be positive for word {word!r}", offset=fh.tell()
                )
            words.append(word)
            means[i] = vec[:-1]
            sigmas[i] = vec[-1]
        if fh.read(1):
            raise ModelFormatError(
                path, f"trailing data after {v} records", offset=fh.tell()
            )
    return _finish_load(path, means, sigmas, bias1, bias2, words)


def _finish_load(path, means, sigmas, bias1, bias2, words):
    try:
        index = WordIndex.from_words(words)
    except ValueError as exc:
        raise ModelFormatError(path, str(exc)) from None
    params = EmbeddingMatrix(means=means, sigmas=sigmas, bias1=bias1, bias2=bias2)
    return params, index

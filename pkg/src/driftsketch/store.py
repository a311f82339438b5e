"""Persistence and interchange.

Formats owned by this module:

- Images: 8-bit binary PGM (P5, grayscale) and PPM (P6, RGB); maxval <= 255.
- Embedding files: header ``driftsketch-emb v1 dim=<d> count=<n>``, then one
  ``<id> <v1> ... <vd>`` record per line.
- Sketch library: binary, magic ``DSKL``, u16 version, u64 payload length,
  JSON payload, 8-byte BLAKE2b checksum of the payload.
- Model checkpoints and split plans: one-line JSON followed by a
  ``# blake2b=<hex>`` integrity line.
- Reports (drift and sensitivity): JSON-lines or CSV, one record per
  period/level, reals rendered with 17 significant digits (round-trip
  exact), a trailing checksum record; CSV extras ride in ``#`` comment lines
  so the files stay directly plottable.

Every loader verifies integrity and raises named StoreErrors; flipping any
payload bit is detected. All writes are atomic (temp file + rename).
"""

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DataError, ImageGrid, StoreError, seeded_rng
from .extract import EMBEDDING_MAGIC
from .sketchlib import MinHashSignature, QuantConfig, SketchConfig, SketchLibrary
from .stats import DriftReport, PeriodStats
from .noiselab import SensitivityReport, SensitivityRow

LIBRARY_MAGIC = b"DSKL"
LIBRARY_VERSION = 1
_CHECKSUM_PREFIX = "# blake2b="


def _digest(payload):
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def atomic_write_bytes(path, data):
    """Write bytes via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-driftsketch-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_float(x):
    # 17 significant digits: round-trip exact for float64
    return f"{float(x):.17g}"


def _jdump(obj, sort_keys=False):
    """Compact JSON with floats at 17 significant digits."""
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_jdump(v, sort_keys) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted(obj.items()) if sort_keys else obj.items()
        return "{" + ",".join(f"{json.dumps(str(k))}:{_jdump(v, sort_keys)}" for k, v in items) + "}"
    raise TypeError(f"unserializable type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def _next_header_token(data, pos):
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise StoreError("corrupt-header: truncated header")
    return data[start:pos], pos


def load_image(path):
    """Decode an 8-bit binary PGM (P5) or PPM (P6) file into an ImageGrid."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise StoreError(f"unsupported-format: expected P5 or P6 magic in {path}")
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_header_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise StoreError(f"corrupt-header: non-integer header token {token!r}")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise StoreError(f"corrupt-header: dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise StoreError(f"unsupported-format: maxval {maxval} (8-bit only)")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise StoreError("corrupt-header: missing separator before raster")
    pos += 1
    needed = width * height * channels
    raster = data[pos : pos + needed]
    if len(raster) < needed:
        raise StoreError(f"truncated-data: raster has {len(raster)} bytes, needs {needed}")
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / float(maxval)
    return ImageGrid(width=width, height=height, channels=channels, pixels=pixels)


def save_image(img, path):
    """Encode an ImageGrid as binary PGM (1 channel) or PPM (3 channels)."""
    from .core import validate_image

    validate_image(img)
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    raster = np.rint(img.pixels * 255.0).astype(np.uint8).tobytes()
    atomic_write_bytes(path, header + raster)


def load_images_dir(directory):
    """Load every .pgm/.ppm file in a directory, sorted by filename.

    Returns (images, source_ids) with ids the bare filenames.
    """
    names = sorted(
        n for n in os.listdir(directory) if n.lower().endswith((".pgm", ".ppm"))
    )
    if not names:
        raise StoreError(f"empty-input: no .pgm/.ppm files in {directory}")
    images = [load_image(os.path.join(directory, n)) for n in names]
    return images, names


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def write_embeddings(features, path, dim=None):
    """Write FeatureVectors in the embedding file format.

    `dim` is only needed for an empty batch, where it cannot be inferred.
    """
    if features:
        dims = {v.values.shape[0] for v in features}
        if len(dims) != 1:
            raise DataError(f"dimension-mismatch: mixed dims {sorted(dims)}")
        dim = dims.pop()
    elif dim is None:
        raise DataError("empty-input: dim required for an empty embedding file")
    ids = [v.source_id for v in features]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate-source-id in embedding batch")
    lines = [f"{EMBEDDING_MAGIC} v1 dim={dim} count={len(features)}"]
    for v in features:
        if not np.isfinite(v.values).all():
            raise DataError(f"non-finite-value({v.source_id})")
        lines.append(v.source_id + " " + " ".join(_format_float(x) for x in v.values))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# sketch library
# ---------------------------------------------------------------------------


def save_library(lib):
    """Serialize a SketchLibrary to bytes (magic, version, payload, checksum)."""
    payload_obj = {
        "schema_version": 1,
        "sketch": {"k": lib.sketch_config.k, "hash_seed": lib.sketch_config.hash_seed},
        "quant": {
            "bin_width": lib.quant_config.bin_width,
            "origin": lib.quant_config.origin,
            "clamp_lo": lib.quant_config.clamp_lo,
            "clamp_hi": lib.quant_config.clamp_hi,
        },
        "extract_fingerprint": lib.extract_fingerprint,
        "entries": [
            {"source_id": sid, "minima": [int(x) for x in sig.minima]}
            for sid, sig in lib.entries
        ],
    }
    payload = _jdump(payload_obj, sort_keys=True).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    header = LIBRARY_MAGIC + LIBRARY_VERSION.to_bytes(2, "little")
    return header + len(payload).to_bytes(8, "little") + payload + digest


def load_library(data):
    """Deserialize bytes produced by save_library, verifying the checksum."""
    if len(data) < 6 or data[:4] != LIBRARY_MAGIC:
        raise StoreError("bad-magic: not a sketch library file")
    version = int.from_bytes(data[4:6], "little")
    if version != LIBRARY_VERSION:
        raise StoreError(f"version-unsupported: {version}")
    if len(data) < 14:
        raise StoreError("checksum-mismatch: truncated file")
    length = int.from_bytes(data[6:14], "little")
    payload = data[14 : 14 + length]
    trailer = data[14 + length : 14 + length + 8]
    if len(payload) != length or len(trailer) != 8:
        raise StoreError("checksum-mismatch: truncated payload")
    if hashlib.blake2b(payload, digest_size=8).digest() != trailer:
        raise StoreError("checksum-mismatch")
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreError(f"checksum-mismatch: undecodable payload ({exc})")
    try:
        sketch = SketchConfig(**obj["sketch"])
        quant = QuantConfig(**obj["quant"])
        entries = tuple(
            (
                e["source_id"],
                MinHashSignature(
                    minima=np.array(e["minima"], dtype=np.uint64),
                    k=sketch.k,
                    hash_seed=sketch.hash_seed,
                ),
            )
            for e in obj["entries"]
        )
        return SketchLibrary(
            entries=entries,
            sketch_config=sketch,
            quant_config=quant,
            extract_fingerprint=obj["extract_fingerprint"],
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise StoreError(f"malformed-payload: {exc}")


def write_library(lib, path):
    atomic_write_bytes(path, save_library(lib))


def read_library(path):
    with open(path, "rb") as fh:
        return load_library(fh.read())


# ---------------------------------------------------------------------------
# checked JSON documents (model checkpoints, split plans)
# ---------------------------------------------------------------------------


def _write_checked_json(obj, path):
    line = _jdump(obj).encode("utf-8")
    checksum = f"{_CHECKSUM_PREFIX}{_digest(line)}\n".encode("ascii")
    atomic_write_bytes(path, line + b"\n" + checksum)


def _read_checked_json(path, kind):
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = raw.split(b"\n")
    if len(lines) < 3:
        raise StoreError(f"bad-magic: not a {kind} file")
    payload, checksum_line = lines[0], lines[1].decode("ascii", errors="replace")
    if not checksum_line.startswith(_CHECKSUM_PREFIX):
        raise StoreError(f"bad-magic: missing integrity line in {kind} file")
    if _digest(payload) != checksum_line[len(_CHECKSUM_PREFIX) :]:
        raise StoreError("checksum-mismatch")
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreError(f"checksum-mismatch: undecodable payload ({exc})")
    if obj.get("kind") != kind:
        raise StoreError(f"bad-magic: expected kind {kind!r}, got {obj.get('kind')!r}")
    return obj


def save_model(model, path, train_config=None):
    """Persist a HeadModel checkpoint (versioned record of d, w, b)."""
    from dataclasses import asdict

    obj = {
        "kind": "head_model",
        "schema_version": 1,
        "dim": model.w.shape[0],
        "w": [float(x) for x in model.w],
        "b": model.b,
        "train": asdict(train_config) if train_config is not None else None,
    }
    _write_checked_json(obj, path)


def load_model(path):
    from .head import HeadModel

    obj = _read_checked_json(path, "head_model")
    try:
        w = np.array(obj["w"], dtype=np.float64)
        if w.shape[0] != obj["dim"]:
            raise StoreError(f"malformed-payload: dim {obj['dim']} but {w.shape[0]} weights")
        return HeadModel(w=w, b=float(obj["b"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreError(f"malformed-payload: {exc}")


# ---------------------------------------------------------------------------
# dataset splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    n_groups: int
    seed: int
    assignment: dict

    def groups(self):
        """Ids per group, in assignment (shuffle) order."""
        out = [[] for _ in range(self.n_groups)]
        for sid, g in self.assignment.items():
            out[g].append(sid)
        return out


def split_dataset(ids, n_groups, seed):
    """Seeded shuffle then round-robin assignment into n_groups groups."""
    if n_groups < 2:
        raise ConfigError(f"config-invalid: n_groups must be >= 2, got {n_groups}")
    ids = list(ids)
    if len(set(ids)) != len(ids):
        dupes = sorted({x for x in ids if ids.count(x) > 1})
        raise DataError(f"duplicate-ids: {dupes[:5]}")
    if len(ids) < n_groups:
        raise DataError(f"too-few-ids: {len(ids)} ids for {n_groups} groups")
    order = seeded_rng(seed, "store.split").permutation(len(ids))
    assignment = {ids[int(idx)]: pos % n_groups for pos, idx in enumerate(order)}
    return SplitPlan(n_groups=n_groups, seed=seed, assignment=assignment)


def save_split(plan, path):
    obj = {
        "kind": "split_plan",
        "schema_version": 1,
        "n_groups": plan.n_groups,
        "seed": plan.seed,
        "assignment": plan.assignment,
    }
    _write_checked_json(obj, path)


def load_split(path):
    obj = _read_checked_json(path, "split_plan")
    try:
        return SplitPlan(
            n_groups=int(obj["n_groups"]),
            seed=int(obj["seed"]),
            assignment={k: int(v) for k, v in obj["assignment"].items()},
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise StoreError(f"malformed-payload: {exc}")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

DRIFT_FIELDS = (
    "period_id",
    "n_images",
    "ks_d",
    "ks_p",
    "cosine_score",
    "gate_flag_count",
    "drift_flag",
)
SENSITIVITY_FIELDS = ("level", "cosine_score", "ks_d", "ks_p", "anomaly_rate")


def _drift_row(p):
    return {
        "period_id": p.period_id,
        "n_images": p.n_images,
        "ks_d": p.ks_d,
        "ks_p": p.ks_p,
        "cosine_score": p.cosine_score,
        "gate_flag_count": p.gate_flag_count,
        "drift_flag": p.drift_flag,
    }


def _sensitivity_row(r):
    return {
        "level": r.level,
        "cosine_score": r.cosine_score,
        "ks_d": r.ks_d,
        "ks_p": r.ks_p,
        "anomaly_rate": r.anomaly_rate,
    }


def _report_parts(report):
    if isinstance(report, DriftReport):
        report.validate()
        header = {
            "kind": "drift_report",
            "schema_version": 1,
            "baseline_id": report.baseline_id,
            "ks_alpha": report.ks_alpha,
        }
        return header, [_drift_row(p) for p in report.periods]
    if isinstance(report, SensitivityReport):
        report.validate()
        header = {
            "kind": "sensitivity_report",
            "schema_version": 1,
            "noise_kind": report.noise_kind,
        }
        return header, [_sensitivity_row(r) for r in report.rows]
    raise DataError(f"unsupported report type {type(report).__name__}")


def _csv_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _format_float(value)
    text = str(value)
    if any(c in text for c in ",\"\n"):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_report(report, format, path, config=None):
    """Write a report as JSON-lines or CSV, one record per period/level.

    JSON-lines: a header object, the records, and a trailing checksum
    record. CSV: optional ``# config=...`` comment (only when a config is
    given), ``# <header>`` comment, the column header, the data rows, and a
    trailing ``# blake2b=...`` comment; comment lines keep the CSV loadable
    by readers that honor ``#`` comments.
    """
    header, rows = _report_parts(report)
    if format == "jsonl":
        header = dict(header)
        header["config"] = config
        lines = [_jdump(header)] + [_jdump(r) for r in rows]
        body = ("\n".join(lines) + "\n").encode("utf-8")
        trailer = _jdump({"kind": "checksum", "blake2b": _digest(body)}).encode("utf-8")
        atomic_write_bytes(path, body + trailer + b"\n")
    elif format == "csv":
        fields = list(rows[0].keys())
        lines = []
        if config is not None:
            lines.append("# config=" + _jdump(config))
        lines.append("# " + _jdump(header))
        lines.append(",".join(fields))
        for r in rows:
            lines.append(",".join(_csv_cell(r[f]) for f in fields))
        body = ("\n".join(lines) + "\n").encode("utf-8")
        trailer = f"{_CHECKSUM_PREFIX}{_digest(body)}\n".encode("ascii")
        atomic_write_bytes(path, body + trailer)
    else:
        raise ConfigError(f"config-invalid: unknown report format {format!r}")


def _read_report_lines(path, expected_kind):
    """Split a report file into verified body lines plus the checksum trailer.

    The digest is checked over the exact body bytes as stored, so any
    single-bit corruption is caught before parsing.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw:
        raise StoreError(f"bad-magic: empty {expected_kind} file")
    if not raw.endswith(b"\n"):
        raise StoreError("checksum-mismatch: missing trailing newline")
    cut = raw.rfind(b"\n", 0, len(raw) - 1)
    if cut < 0:
        raise StoreError(f"bad-magic: not a {expected_kind} file")
    body = raw[: cut + 1]
    try:
        trailer = raw[cut + 1 : -1].decode("utf-8")
        lines = body.decode("utf-8").split("\n")[:-1]
    except UnicodeDecodeError as exc:
        raise StoreError(f"checksum-mismatch: undecodable file ({exc})")
    if not lines:
        raise StoreError(f"bad-magic: not a {expected_kind} file")
    if lines[0].startswith("{"):
        # jsonl
        try:
            last = json.loads(trailer)
        except json.JSONDecodeError:
            raise StoreError("checksum-mismatch: unparseable checksum record")
        if not isinstance(last, dict) or last.get("kind") != "checksum":
            raise StoreError("bad-magic: missing checksum record")
        if _digest(body) != last.get("blake2b"):
            raise StoreError("checksum-mismatch")
        try:
            header = json.loads(lines[0])
            records = [json.loads(ln) for ln in lines[1:]]
        except json.JSONDecodeError as exc:
            raise StoreError(f"malformed-payload: {exc}")
        if header.get("kind") != expected_kind:
            raise StoreError(
                f"bad-magic: expected {expected_kind!r}, got {header.get('kind')!r}"
            )
        return header, records, header.get("config")
    # csv
    if not trailer.startswith(_CHECKSUM_PREFIX):
        raise StoreError("bad-magic: missing checksum line")
    if _digest(body) != trailer[len(_CHECKSUM_PREFIX) :]:
        raise StoreError("checksum-mismatch")
    config = None
    header = None
    data_lines = []
    try:
        for ln in lines:
            if ln.startswith("# config="):
                config = json.loads(ln[len("# config=") :])
            elif ln.startswith("# "):
                header = json.loads(ln[2:])
            else:
                data_lines.append(ln)
    except json.JSONDecodeError as exc:
        raise StoreError(f"malformed-payload: {exc}")
    if header is None or header.get("kind") != expected_kind:
        raise StoreError(f"bad-magic: expected {expected_kind!r} header")
    if len(data_lines) < 1:
        raise StoreError("bad-magic: missing column header")
    columns = data_lines[0].split(",")
    rows = []
    for ln in data_lines[1:]:
        rows.append(dict(zip(columns, _split_csv_line(ln))))
    return header, rows, config


def _split_csv_line(line):
    # minimal CSV field splitter matching _csv_cell quoting
    out = []
    field = []
    quoted = False
    i = 0
    while i < len(line):
        c = line[i]
        if quoted:
            if c == '"':
                if i + 1 < len(line) and line[i + 1] == '"':
                    field.append('"')
                    i += 1
                else:
                    quoted = False
            else:
                field.append(c)
        elif c == '"':
            quoted = True
        elif c == ",":
            out.append("".join(field))
            field = []
        else:
            field.append(c)
        i += 1
    out.append("".join(field))
    return out


def _to_bool(value):
    if isinstance(value, bool):
        return value
    if value in ("true", "false"):
        return value == "true"
    raise StoreError(f"checksum-mismatch: bad boolean {value!r}")


def read_drift_report(path):
    """Re-parse a drift report written by write_report (either format).

    Returns (DriftReport, config-or-None).
    """
    header, rows, config = _read_report_lines(path, "drift_report")
    try:
        periods = tuple(
            PeriodStats(
                period_id=str(r["period_id"]),
                n_images=int(r["n_images"]),
                ks_d=float(r["ks_d"]),
                ks_p=float(r["ks_p"]),
                cosine_score=float(r["cosine_score"]),
                gate_flag_count=int(r["gate_flag_count"]),
                drift_flag=_to_bool(r["drift_flag"]),
            )
            for r in rows
        )
        report = DriftReport(
            baseline_id=str(header["baseline_id"]),
            ks_alpha=float(header["ks_alpha"]),
            periods=periods,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreError(f"malformed-payload: {exc}")
    report.validate()
    return report, config


def read_sensitivity_report(path):
    """Re-parse a sensitivity report written by write_report (either format)."""
    header, rows, config = _read_report_lines(path, "sensitivity_report")
    try:
        report = SensitivityReport(
            noise_kind=str(header["noise_kind"]),
            rows=tuple(
                SensitivityRow(
                    level=float(r["level"]),
                    cosine_score=float(r["cosine_score"]),
                    ks_d=float(r["ks_d"]),
                    ks_p=float(r["ks_p"]),
                    anomaly_rate=float(r["anomaly_rate"]),
                )
                for r in rows
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreError(f"malformed-payload: {exc}")
    report.validate()
    return report, config

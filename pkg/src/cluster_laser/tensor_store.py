"""MATX1 matrix files and JSON bundle manifests.

A MATX1 file is a 24-byte header followed by a row-major little-endian
payload::

    0-5    magic b"MATX1\\0"
    6      dtype code (0 = f64, 1 = f32)
    7      reserved, zero
    8-15   rows, uint64 LE
    16-23  cols, uint64 LE

Matrices are always held in memory as float64; f32 files are widened on
load and narrowed on write.
"""

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BundleError, FormatError

MAGIC = b"MATX1\0"
HEADER = struct.Struct("<6sBBQQ")
DTYPE_CODES = {"f64": 0, "f32": 1}
_NUMPY_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}

KINDS = ("mlp_in", "mlp_out", "attn_k", "attn_q")
ROLES = ("weight", "gradient")


def kind_order(kind):
    return KINDS.index(kind)


@dataclass(frozen=True, eq=False)
class MatrixRecord:
    id: str
    layer: int
    kind: str
    role: str
    data: np.ndarray
    dtype: str = "f64"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise BundleError(f"record {self.id!r}: data must be a non-empty 2-D array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.kind not in KINDS:
            raise BundleError(f"record {self.id!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise BundleError(f"record {self.id!r}: unknown role {self.role!r}")
        if self.dtype not in DTYPE_CODES:
            raise BundleError(f"record {self.id!r}: unknown dtype {self.dtype!r}")
        if int(self.layer) != self.layer or self.layer < 0:
            raise BundleError(f"record {self.id!r}: layer must be a non-negative integer")

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data):
        return replace(self, data=data)

    def __eq__(self, other):
        if not isinstance(other, MatrixRecord):
            return NotImplemented
        return (
            (self.id, self.layer, self.kind, self.role, self.dtype)
            == (other.id, other.layer, other.kind, other.role, other.dtype)
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def write_matrix(record):
    """Serialize ``record`` to MATX1 bytes. Output depends only on the record."""
    data = np.asarray(record.data)
    if data.ndim != 2:
        raise FormatError("data must be 2-D", field="data")
    rows, cols = data.shape
    if data.size != rows * cols or rows < 1 or cols < 1:
        raise FormatError("data length does not match rows*cols", field="data")
    if record.dtype not in DTYPE_CODES:
        raise FormatError(f"unknown dtype {record.dtype!r}", field="dtype")
    payload = np.ascontiguousarray(data, dtype=_NUMPY_DTYPES[record.dtype]).tobytes()
    return HEADER.pack(MAGIC, DTYPE_CODES[record.dtype], 0, rows, cols) + payload


def read_matrix(buf, *, id="matrix", layer=0, kind="mlp_in", role="weight"):
    """Parse MATX1 bytes. The file carries no naming metadata, so the
    record's id/layer/kind/role come from the keyword arguments."""
    buf = bytes(buf)
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic", field="magic", offset=0)
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated header, expected {HEADER.size}", field="header", offset=len(buf))
    _, code, reserved, rows, cols = HEADER.unpack_from(buf)
    codes = {v: k for k, v in DTYPE_CODES.items()}
    if code not in codes:
        raise FormatError(f"unknown dtype code {code}", field="dtype", offset=6)
    if reserved != 0:
        raise FormatError(f"reserved byte must be zero, got {reserved}", field="reserved", offset=7)
    if rows < 1:
        raise FormatError("rows must be positive", field="rows", offset=8)
    if cols < 1:
        raise FormatError("cols must be positive", field="cols", offset=16)
    dtype = codes[code]
    expected = rows * cols * _NUMPY_DTYPES[dtype].itemsize
    payload = buf[HEADER.size:]
    if len(payload) < expected:
        raise FormatError(f"truncated payload, expected {expected}", field="payload", offset=HEADER.size + len(payload))
    if len(payload) > expected:
        raise FormatError(f"trailing bytes after payload, expected {expected}", field="payload", offset=HEADER.size + expected)
    data = np.frombuffer(payload, dtype=_NUMPY_DTYPES[dtype]).astype(np.float64).reshape(rows, cols)
    return MatrixRecord(id=id, layer=layer, kind=kind, role=role, data=data, dtype=dtype)


@dataclass(frozen=True)
class ModelBundle:
    """Named collection of weight and gradient matrices.

    ``history`` lists the compression plans already applied to produce this
    bundle (empty for a freshly loaded one).
    """

    name: str
    layer_count: int
    records: tuple
    history: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        validate_bundle(self)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def get(self, record_id):
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def find(self, layer, kind, role="weight"):
        for rec in self.records:
            if (rec.layer, rec.kind, rec.role) == (layer, kind, role):
                return rec
        return None

    def weights(self):
        return [r for r in self.records if r.role == "weight"]

    def gradient_for(self, weight):
        return self.find(weight.layer, weight.kind, "gradient")

    def replace_data(self, record_id, data, plan=None):
        """Return a new bundle with one record's payload swapped."""
        old = self.get(record_id)
        new = old.with_data(data)
        records = tuple(new if r.id == record_id else r for r in self.records)
        history = self.history + ((plan,) if plan is not None else ())
        if new.shape != old.shape:
            return replace(self, records=records, history=history)
        # same ids, triples and shapes as an already validated bundle
        out = object.__new__(ModelBundle)
        for name, value in (("name", self.name), ("layer_count", self.layer_count), ("records", records), ("history", history)):
            object.__setattr__(out, name, value)
        return out

    def with_history(self, plan):
        return replace(self, history=self.history + (plan,))

    def with_gradients(self, gradients):
        """Replace all gradient records; ``gradients`` maps weight id -> G.

        New records get the id ``<weight id>.grad``.
        """
        records = [r for r in self.records if r.role != "gradient"]
        by_id = {r.id: r for r in records}
        for wid, G in gradients.items():
            w = by_id.get(wid)
            if w is None or w.role != "weight":
                raise BundleError(f"no weight record {wid!r} for gradient")
            records.append(MatrixRecord(f"{wid}.grad", w.layer, w.kind, "gradient", G))
        return replace(self, records=tuple(records))


def validate_bundle(bundle):
    if bundle.layer_count < 1:
        raise BundleError("layer_count must be positive")
    ids = set()
    triples = {}
    for rec in bundle.records:
        if rec.id in ids:
            raise BundleError(f"duplicate record id {rec.id!r}")
        ids.add(rec.id)
        key = (rec.layer, rec.kind, rec.role)
        if key in triples:
            raise BundleError(f"duplicate entry for layer {rec.layer}, {rec.kind}, {rec.role}")
        triples[key] = rec
        if rec.layer >= bundle.layer_count:
            raise BundleError(f"record {rec.id!r}: layer {rec.layer} >= layer_count {bundle.layer_count}")
    for (layer, kind, role), rec in triples.items():
        if role != "gradient":
            continue
        weight = triples.get((layer, kind, "weight"))
        if weight is not None and weight.shape != rec.shape:
            raise BundleError(
                f"shape mismatch for layer {layer} {kind}: weight {weight.shape[0]}x{weight.shape[1]}, "
                f"gradient {rec.shape[0]}x{rec.shape[1]}"
            )


def parse_manifest(text, base_dir="."):
    """Build a bundle from manifest JSON text; paths resolve against ``base_dir``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    try:
        name = doc["name"]
        layer_count = int(doc["layer_count"])
        entries = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"manifest missing or malformed field: {exc}") from exc
    base_dir = Path(base_dir)
    records = []
    for entry in entries:
        try:
            rid, layer, kind, role, path = (entry[k] for k in ("id", "layer", "kind", "role", "path"))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"manifest record missing field {exc}") from exc
        full = base_dir / path
        try:
            buf = full.read_bytes()
        except OSError as exc:
            raise BundleError(f"missing file for record {rid!r}: {full}") from exc
        records.append(read_matrix(buf, id=rid, layer=int(layer), kind=kind, role=role))
    return ModelBundle(name=name, layer_count=layer_count, records=records)


def load_bundle(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text()
    except OSError as exc:
        raise BundleError(f"cannot read manifest {manifest_path}") from exc
    return parse_manifest(text, manifest_path.parent)


def manifest_dict(bundle, paths):
    return {
        "name": bundle.name,
        "layer_count": bundle.layer_count,
        "records": [
            {"id": r.id, "layer": r.layer, "kind": r.kind, "role": r.role, "path": paths[r.id]}
            for r in bundle.records
        ],
    }


def save_bundle(bundle, directory, manifest_name="manifest.json"):
    """Write every record as ``<id>.matx`` plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for rec in bundle.records:
        fname = f"{rec.id}.matx"
        (directory / fname).write_bytes(write_matrix(rec))
        paths[rec.id] = fname
    manifest = directory / manifest_name
    manifest.write_text(json.dumps(manifest_dict(bundle, paths), indent=2) + "\n")
    return manifest

"""File formats: binary tensors, JSON manifest/plan, predictions CSV.

Tensor file layout (little-endian)::

    0..3   magic b"LWTN"
    4      version (1)
    5      dtype: 0 = float32, 1 = float64
    6      ndim
    7      reserved, 0
    8..    ndim x uint64 dims
    ...    row-major payload
"""
import contextlib
import csv
import io
import json
import logging
import os
from pathlib import Path
import struct
import tempfile

import numpy as np

from .calibration import PredictionSet
from .conv import ConvLayerSpec
from .planner import CompressionPlan, LayerRecord

logger = logging.getLogger(__name__)

MAGIC = b"LWTN"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBBB")
_MAX_BYTES = 1 << 62

SPEC_FIELDS = ("name", "in_channels", "out_channels", "kernel_size", "stride", "padding", "groups", "input_hw")
RECORD_FIELDS = (
    "name",
    "method",
    "rank",
    "params_before",
    "params_after",
    "flops_before",
    "flops_after",
    "speedup",
    "kernel_rel_error",
    "reason",
    "sublayers",
)
SUBLAYER_FIELDS = ("kind", "spec", "params", "flops", "weights")


class FormatError(ValueError):
    pass


class TensorFormatError(FormatError):
    pass


class BadMagicError(TensorFormatError):
    pass


class VersionError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


class DimOverflowError(TensorFormatError):
    pass


class DtypeError(TensorFormatError):
    pass


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# -- tensors -----------------------------------------------------------------


def encode_tensor(t, dtype=1):
    if dtype not in DTYPES:
        raise DtypeError(f"unknown dtype code {dtype}")
    a = np.asarray(t, dtype=np.float64)
    if a.ndim < 1 or a.ndim > 255:
        raise ValueError(f"cannot store a tensor of order {a.ndim}")
    header = _HEADER.pack(MAGIC, VERSION, dtype, a.ndim, 0)
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + dims + np.ascontiguousarray(a, dtype=DTYPES[dtype]).tobytes()


def decode_tensor(buf):
    if len(buf) < _HEADER.size:
        raise TruncatedError("file shorter than the 8-byte header")
    magic, version, dtype, ndim, _ = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"version mismatch: file {version}, supported {VERSION}")
    if dtype not in DTYPES:
        raise DtypeError(f"unknown dtype code {dtype}")
    if ndim < 1:
        raise TensorFormatError("ndim must be >= 1")
    end = _HEADER.size + 8 * ndim
    if len(buf) < end:
        raise TruncatedError("file ends inside the dims block")
    dims = struct.unpack_from(f"<{ndim}Q", buf, _HEADER.size)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"zero-length dim in {dims}")
    nbytes = DTYPES[dtype].itemsize
    for d in dims:
        nbytes *= d
        if nbytes > _MAX_BYTES:
            raise DimOverflowError(f"dims {dims} overflow the payload size limit")
    payload = memoryview(buf)[end:]
    if len(payload) < nbytes:
        raise TruncatedError(f"payload has {len(payload)} bytes, expected {nbytes}")
    if len(payload) > nbytes:
        raise TensorFormatError(f"{len(payload) - nbytes} trailing bytes after payload")
    data = np.frombuffer(payload, dtype=DTYPES[dtype]).astype(np.float64)
    return data.reshape(dims)


def write_tensor(t, path, dtype=1):
    data = encode_tensor(t, dtype)
    with atomic_write(path) as fh:
        fh.write(data)


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# -- JSON helpers --------------------------------------------------------------


def _check_fields(obj, allowed, where, strict, required=()):
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        if strict:
            raise FormatError(f"{where}: unknown fields {unknown}")
        logger.warning("%s: ignoring unknown fields %s", where, unknown)
    missing = [k for k in required if k not in obj]
    if missing:
        raise FormatError(f"{where}: missing fields {missing}")


def spec_to_dict(spec):
    return {
        "name": spec.name,
        "in_channels": spec.in_channels,
        "out_channels": spec.out_channels,
        "kernel_size": spec.kernel_size,
        "stride": spec.stride,
        "padding": spec.padding,
        "groups": spec.groups,
        "input_hw": list(spec.input_hw) if spec.input_hw is not None else None,
    }


def spec_from_dict(d, where, strict=False, extra=()):
    _check_fields(d, SPEC_FIELDS + tuple(extra), where, strict,
                  required=("name", "in_channels", "out_channels", "kernel_size"))
    try:
        hw = d.get("input_hw")
        return ConvLayerSpec(
            name=str(d["name"]),
            in_channels=int(d["in_channels"]),
            out_channels=int(d["out_channels"]),
            kernel_size=int(d["kernel_size"]),
            stride=int(d.get("stride", 1)),
            padding=int(d.get("padding", 0)),
            groups=int(d.get("groups", 1)),
            input_hw=tuple(hw) if hw is not None else None,
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from exc


def _dump_json(obj, path):
    with atomic_write(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# -- manifest ------------------------------------------------------------------


def read_manifest(path, strict=False):
    """Parse a manifest into ``[(ConvLayerSpec, weight_path)]``.

    Relative weight paths resolve against the manifest's directory.
    """
    path = Path(path)
    doc = _load_json(path)
    _check_fields(doc, ("version", "layers"), str(path), strict, required=("layers",))
    out = []
    for i, entry in enumerate(doc["layers"]):
        where = f"{path}: layers[{i}]"
        spec = spec_from_dict(entry, where, strict, extra=("weights",))
        if spec.input_hw is None:
            raise FormatError(f"{where}: input_hw is required")
        if "weights" not in entry:
            raise FormatError(f"{where}: missing weights reference")
        out.append((spec, path.parent / entry["weights"]))
    names = [s.name for s, _ in out]
    if len(set(names)) != len(names):
        raise FormatError(f"{path}: duplicate layer names")
    return out


def write_manifest(entries, path):
    path = Path(path)
    layers = []
    for spec, wpath in entries:
        d = spec_to_dict(spec)
        wpath = Path(wpath)
        with contextlib.suppress(ValueError):
            wpath = wpath.resolve().relative_to(path.parent.resolve())
        d["weights"] = str(wpath)
        layers.append(d)
    _dump_json({"version": 1, "layers": layers}, path)


def load_weights(entries):
    """Read every weight file; errors name the layer."""
    weights = {}
    for spec, wpath in entries:
        try:
            w = read_tensor(wpath)
        except FileNotFoundError as exc:
            raise FormatError(f"layer {spec.name!r}: weight file {wpath} not found") from exc
        except TensorFormatError as exc:
            raise FormatError(f"layer {spec.name!r}: {wpath}: {exc}") from exc
        if w.shape != spec.weight_shape:
            raise FormatError(f"layer {spec.name!r}: weights {w.shape} != expected {spec.weight_shape}")
        weights[spec.name] = w
    return weights


# -- plan ----------------------------------------------------------------------


def plan_to_dict(plan, weight_paths=None, base=None):
    """``weight_paths[sublayer name]`` gives the file holding that sub-layer."""
    weight_paths = weight_paths or {}
    records = []
    for rec in plan.records:
        subs = []
        for sub in rec.sublayers:
            entry = {
                "kind": sub["kind"],
                "spec": spec_to_dict(sub["spec"]),
                "params": sub["params"],
                "flops": sub["flops"],
            }
            wp = weight_paths.get(sub["spec"].name, sub.get("weights"))
            if wp is not None:
                wp = Path(wp)
                if base is not None:
                    with contextlib.suppress(ValueError):
                        wp = wp.resolve().relative_to(Path(base).resolve())
                entry["weights"] = str(wp)
            subs.append(entry)
        records.append(
            {
                "name": rec.name,
                "method": rec.method,
                "rank": rec.rank,
                "params_before": rec.params_before,
                "params_after": rec.params_after,
                "flops_before": rec.flops_before,
                "flops_after": rec.flops_after,
                "speedup": rec.speedup,
                "kernel_rel_error": rec.kernel_rel_error,
                "reason": rec.reason,
                "sublayers": subs,
            }
        )
    return {"version": 1, "records": records, "totals": plan.totals}


def plan_from_dict(doc, where="plan", strict=False, base=None):
    _check_fields(doc, ("version", "records", "totals"), where, strict, required=("records",))
    records = []
    for i, r in enumerate(doc["records"]):
        rw = f"{where}: records[{i}]"
        _check_fields(r, RECORD_FIELDS, rw, strict, required=RECORD_FIELDS[:9])
        if r["method"] not in ("cpd-epc", "svd", "skip"):
            raise FormatError(f"{rw}: unknown method {r['method']!r}")
        subs = []
        for j, s in enumerate(r.get("sublayers", [])):
            sw = f"{rw}.sublayers[{j}]"
            _check_fields(s, SUBLAYER_FIELDS, sw, strict, required=("kind", "spec", "params", "flops"))
            sub = {
                "kind": s["kind"],
                "spec": spec_from_dict(s["spec"], sw + ".spec", strict),
                "params": s["params"],
                "flops": s["flops"],
            }
            if "weights" in s:
                wp = Path(s["weights"])
                sub["weights"] = str(Path(base) / wp) if base is not None and not wp.is_absolute() else str(wp)
            subs.append(sub)
        try:
            records.append(
                LayerRecord(
                    name=str(r["name"]),
                    method=r["method"],
                    rank=int(r["rank"]),
                    params_before=r["params_before"],
                    params_after=r["params_after"],
                    flops_before=r["flops_before"],
                    flops_after=r["flops_after"],
                    speedup=float(r["speedup"]),
                    kernel_rel_error=float(r["kernel_rel_error"]),
                    reason=str(r.get("reason", "")),
                    sublayers=subs,
                )
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{rw}: {exc}") from exc
    return CompressionPlan(records)


def write_plan(plan, path, weight_paths=None):
    path = Path(path)
    _dump_json(plan_to_dict(plan, weight_paths, base=path.parent), path)


def read_plan(path, strict=False):
    path = Path(path)
    return plan_from_dict(_load_json(path), str(path), strict, base=path.parent)


# -- predictions ---------------------------------------------------------------


def parse_predictions(text, where="predictions"):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError(f"{where}: empty file") from None
    if header not in (["p_hat", "label"], ["p_hat", "label", "logit"]):
        raise FormatError(f"{where}: line 1: expected header 'p_hat,label[,logit]', got {','.join(header)!r}")
    has_logit = len(header) == 3
    p_hat, labels, logits = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"{where}: line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            ph = float(row[0])
            lab = float(row[1])
            lg = float(row[2]) if has_logit else None
        except ValueError as exc:
            raise FormatError(f"{where}: line {line}: {exc}") from None
        if not 0.0 <= ph <= 1.0:
            raise FormatError(f"{where}: line {line}: p_hat {ph} outside [0, 1]")
        if lab not in (0.0, 1.0):
            raise FormatError(f"{where}: line {line}: label {row[1]!r} is not 0 or 1")
        p_hat.append(ph)
        labels.append(lab)
        if has_logit:
            logits.append(lg)
    if not p_hat:
        raise FormatError(f"{where}: no prediction rows")
    return PredictionSet(np.array(p_hat), np.array(labels), np.array(logits) if has_logit else None)


def read_predictions(path):
    return parse_predictions(Path(path).read_text(), str(path))


def write_predictions(preds, path):
    with atomic_write(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_logit = preds.logits is not None
        w.writerow(["p_hat", "label", "logit"] if has_logit else ["p_hat", "label"])
        for i in range(len(preds)):
            row = [repr(float(preds.p_hat[i])), int(preds.p[i])]
            if has_logit:
                row.append(repr(float(preds.logits[i])))
            w.writerow(row)


def write_reliability_csv(records, path):
    with atomic_write(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "midpoint", "acc", "conf", "gap", "count"])
        for r in records:
            w.writerow([r["bin"], f"{r['midpoint']:.6g}", f"{r['acc']:.6f}", f"{r['conf']:.6f}",
                        f"{r['gap']:.6f}", r["count"]])

"""Fitted-model container: prediction, per-component explanations, persistence."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .bases import BasisFamily, CommunityAssignment, build_explicit, build_family
from .numerics import LowRankFactor

__all__ = [
    "FORMAT_VERSION",
    "ModelFormatError",
    "FittedModel",
    "component_labels",
    "save",
    "load",
]

FORMAT_VERSION = "omic-model/1"
_MAGIC = b"OMICMDL\0"

_LABELS = {
    "softimpute": {(1, 1): "lowrank"},
    "bomic": {
        (1, 1): "global",
        (1, 2): "item_bias",
        (2, 1): "user_bias",
        (2, 2): "residual",
    },
    "omicplus": {
        (1, 1): "comm_comm",
        (1, 2): "ucomm_item",
        (2, 1): "user_icomm",
        (2, 2): "residual",
    },
    "bomicplus": {
        (1, 1): "global",
        (1, 2): "icomm_bias",
        (1, 3): "item_bias",
        (2, 1): "ucomm_bias",
        (2, 2): "comm_comm",
        (2, 3): "ucomm_item",
        (3, 1): "user_bias",
        (3, 2): "user_icomm",
        (3, 3): "residual",
    },
}


class ModelFormatError(ValueError):
    """The model file is corrupt, truncated, or written by an incompatible version."""


def component_labels(family: BasisFamily):
    """Readable names of the components, ``"M(k,l)"`` where no name is defined."""
    names = _LABELS.get(family.kind, {})
    return {key: names.get(key, f"M{key}") for key in family.keys()}


def _to_factor(family, key, comp):
    if isinstance(comp, LowRankFactor):
        return comp
    core = np.asarray(comp, dtype=float)
    row, col = family.row_block(key[0]), family.col_block(key[1])
    if core.size == 0 or not np.any(core):
        return LowRankFactor.zeros(row.size, col.size)
    U, s, Vt = np.linalg.svd(core, full_matrices=False)
    keep = s > 0
    return LowRankFactor(row.expand(U[:, keep]), s[keep], col.expand(Vt[keep].T))


@dataclass(eq=False)
class FittedModel:
    """Components ``M(k,l)`` of a fitted model together with their basis family.

    ``components`` maps ``(k, l)`` to either a ``d_k x d_l`` core (dense
    solver) or an ambient :class:`LowRankFactor` (scalable solver); absent
    keys are zero.  ``meta`` carries fit metadata such as the seed, the
    number of iterations and the final objective.
    """

    family: BasisFamily
    components: dict
    lambdas: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = set(self.family.keys())
        widths = self.family.widths()
        m, n = self.family.shape
        for key, comp in self.components.items():
            if key not in keys:
                raise ValueError(f"component {key} does not exist in family {self.family.kind!r}")
            k, l = key
            if isinstance(comp, LowRankFactor):
                if comp.shape != (m, n):
                    raise ValueError(f"factor {key} has shape {comp.shape}, expected {(m, n)}")
            else:
                expected = (widths[0][k - 1], widths[1][l - 1])
                if np.shape(comp) != expected:
                    raise ValueError(
                        f"core {key} has shape {np.shape(comp)}, expected {expected}"
                    )
        self._factors = None

    @property
    def shape(self):
        return tuple(self.family.shape)

    def factors(self):
        """Ambient low-rank form of every component (cached)."""
        if self._factors is None:
            self._factors = {
                key: _to_factor(self.family, key, comp)
                for key, comp in sorted(self.components.items())
            }
        return self._factors

    def _check_index(self, rows, cols):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if rows.shape != cols.shape:
            raise ValueError("row and column index arrays must have the same shape")
        for idx, size, name in ((rows, self.shape[0], "row"), (cols, self.shape[1], "column")):
            if idx.size and not np.issubdtype(idx.dtype, np.integer):
                raise TypeError(f"{name} indices must be integers")
            if idx.size and (idx.min() < 0 or idx.max() >= size):
                raise IndexError(f"{name} index out of range [0, {size})")
        return rows.astype(np.int64), cols.astype(np.int64)

    def explain(self, rows, cols):
        """Per-component contributions at the given entries (arrays)."""
        rows, cols = self._check_index(rows, cols)
        out = {key: np.zeros(rows.shape) for key in self.family.keys()}
        for key, factor in self.factors().items():
            out[key] = factor.entries(rows.ravel(), cols.ravel()).reshape(rows.shape)
        return out

    def predict(self, rows, cols):
        """``F[rows, cols]`` as an array (scalar in, 0-d array out)."""
        parts = self.explain(rows, cols)
        total = np.zeros(np.shape(rows))
        for key in sorted(parts):
            total = total + parts[key]
        return total

    def explain_entry(self, i, j):
        """Contribution of every component to the prediction at ``(i, j)``."""
        parts = self.explain(np.array([i]), np.array([j]))
        return {key: float(v[0]) for key, v in parts.items()}

    def to_dense(self):
        """Full ``m x n`` predictor (small problems only)."""
        m, n = self.shape
        out = np.zeros((m, n))
        for factor in self.factors().values():
            out += factor.to_dense()
        return out

    def component_norms(self):
        """Frobenius norm of each component (zero for absent ones)."""
        out = {key: 0.0 for key in self.family.keys()}
        for key, comp in self.components.items():
            if isinstance(comp, LowRankFactor):
                out[key] = comp.frobenius_norm()
            else:
                out[key] = float(np.linalg.norm(comp))
        return out

    def labels(self):
        return component_labels(self.family)

    def extract_biases(self):
        """``(c, u, b)``: global offset, user biases and item biases.

        ``u`` collects every user-side block crossed with the constant item
        direction and ``b`` the symmetric item-side blocks, so both sum to
        zero.
        """
        if self.family.kind not in ("bomic", "bomicplus"):
            raise ValueError(f"family {self.family.kind!r} has no bias components")
        m, n = self.shape
        fac = self.factors()
        zero = LowRankFactor.zeros(m, n)
        c = float(fac.get((1, 1), zero).entries(np.array([0]), np.array([0]))[0])
        u = np.zeros(m)
        for k in range(2, self.family.K + 1):
            u += fac.get((k, 1), zero).entries(np.arange(m), np.zeros(m, dtype=np.int64))
        b = np.zeros(n)
        for l in range(2, self.family.L + 1):
            b += fac.get((1, l), zero).entries(np.zeros(n, dtype=np.int64), np.arange(n))
        return c, u, b


def _json_lambda(v):
    return "inf" if math.isinf(v) else float(v)


def _family_payload(family, arrays):
    desc = family.descriptor()
    if family.kind == "explicit":
        desc["row_blocks"] = []
        desc["col_blocks"] = []
        for side, blocks in (("row_blocks", family.row_blocks), ("col_blocks", family.col_blocks)):
            for i, block in enumerate(blocks):
                name = f"family/{side}/{i}"
                arrays[name] = block.basis()
                desc[side].append(name)
    for name in ("user_communities", "item_communities"):
        assign = getattr(family, name)
        if assign is not None:
            arrays[f"family/{name}"] = assign.community_of
            if assign.labels is not None:
                desc[name]["labels"] = [str(x) for x in assign.labels]
    return desc


def save(model: FittedModel, path):
    """Write ``model`` to ``path`` in the ``omic-model/1`` binary format.

    Layout: magic, little-endian u64 header length, UTF-8 JSON header,
    concatenated little-endian arrays, SHA-256 of everything before it.
    """
    arrays = {}
    family = _family_payload(model.family, arrays)
    comps = []
    for (k, l), comp in sorted(model.components.items()):
        base = f"comp/{k}/{l}"
        if isinstance(comp, LowRankFactor):
            arrays[base + "/U"] = comp.U
            arrays[base + "/d"] = comp.d
            arrays[base + "/V"] = comp.V
            comps.append({"key": [k, l], "form": "factor", "arrays": [base + s for s in ("/U", "/d", "/V")]})
        else:
            arrays[base + "/core"] = np.asarray(comp, dtype=float)
            comps.append({"key": [k, l], "form": "core", "arrays": [base + "/core"]})

    table = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    header = {
        "version": FORMAT_VERSION,
        "family": family,
        "components": comps,
        "lambdas": [[k, l, _json_lambda(v)] for (k, l), v in sorted(model.lambdas.items())],
        "meta": model.meta,
        "arrays": table,
    }
    head = json.dumps(header, sort_keys=True, default=_jsonable).encode("utf-8")
    body = _MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _read_header(blob):
    if len(blob) < len(_MAGIC) + 8 + 32 or not blob.startswith(_MAGIC):
        raise ModelFormatError("not an omic model file (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    (hlen,) = struct.unpack("<Q", body[len(_MAGIC): len(_MAGIC) + 8])
    start = len(_MAGIC) + 8
    if start + hlen > len(body):
        raise ModelFormatError("model file is truncated")
    try:
        header = json.loads(body[start: start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"model header is corrupt: {exc}") from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"incompatible model format {version!r}; this build reads {FORMAT_VERSION!r}"
        )
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model file checksum mismatch (truncated or corrupt)")
    return header, body[start + hlen:]


def _rebuild_family(desc, arrays):
    kind = desc["kind"]
    m, n = desc["shape"]
    if kind == "explicit":
        return build_explicit(
            [arrays[name] for name in desc["row_blocks"]],
            [arrays[name] for name in desc["col_blocks"]],
        )
    assigns = {}
    for name in ("user_communities", "item_communities"):
        if name in desc:
            labels = desc[name].get("labels")
            assign = CommunityAssignment(
                arrays[f"family/{name}"], tuple(labels) if labels is not None else None
            )
            if assign.digest() != desc[name]["sha256"]:
                raise ModelFormatError(f"{name} do not match their stored digest")
            assigns[name] = assign
    return build_family(
        kind, m, n, assigns.get("user_communities"), assigns.get("item_communities")
    )


def load(path):
    """Read a model written by :func:`save`; raises :class:`ModelFormatError` on bad input."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, data = _read_header(blob)
    arrays = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(data):
            raise ModelFormatError("model file is truncated")
        arr = np.frombuffer(data[lo:hi], dtype=entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.int64 if entry["dtype"] == "<i8" else float)
    family = _rebuild_family(header["family"], arrays)
    comps = {}
    for entry in header["components"]:
        key = tuple(entry["key"])
        parts = [arrays[name] for name in entry["arrays"]]
        comps[key] = LowRankFactor(*parts) if entry["form"] == "factor" else parts[0]
    lambdas = {(k, l): (math.inf if v == "inf" else float(v)) for k, l, v in header["lambdas"]}
    return FittedModel(family, comps, lambdas, header.get("meta", {}))

"""Problem ingestion: ERM specs, the conjugate transform, instance files.

A primal ERM problem min_y sum_i f_i(A_i y - c_i) turns into the standard
block form this package solves through conjugates:

    min_y sum f_i(A_i y - c_i)  =  -[ min_w  c.T w + sum_i f_i*(w_i)
                                      s.t.   A.T w = 0 ],

and the objective terms f_i*(w_i) linearize by lifting each block with one
epigraph coordinate o_i >= f_i*(w_i) carrying unit cost. The lifted blocks
keep their barriers from a catalog (square loss ships built in; anything
else is declared by giving the conjugate's epigraph barrier explicitly).

Instances serialize to a single JSON document; the row matrix may live in a
raw little-endian float64 sidecar next to the JSON for large fixtures. All
invariants are validated on load with errors that name the exact location
(JSON-pointer style) or the failed check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier import (
    BUILTIN_KINDS,
    BarrierDescriptor,
    BlockLayout,
    NotInteriorError,
    anchor_point,
    ball,
    barrier_eval,
    box,
    epigraph_square,
    nonneg_orthant,
)
from .linalg import gram

__all__ = [
    "InstanceFormatError",
    "InstanceValidationError",
    "BLOCK_DIM_CAP",
    "LossTerm",
    "PrimalErmSpec",
    "ErmInstance",
    "dualize",
    "load_instance",
    "save_instance",
    "load_primal_spec",
    "save_primal_spec",
]

# hard cap on block dimension; validation rejects anything larger
BLOCK_DIM_CAP = 4

FORMAT_INSTANCE = "ermipm-instance"
FORMAT_PRIMAL = "ermipm-primal"


class InstanceFormatError(ValueError):
    """Structurally malformed file; message carries a /path/to/field pointer."""


class InstanceValidationError(ValueError):
    """Well-formed file whose contents violate an instance invariant."""


# ---------------------------------------------------------------------------
# primal side


@dataclass(frozen=True)
class LossTerm:
    """One summand f_i(A_i y - c_i).

    kind "square" is the built-in conjugate pair f(z) = z^2, f*(w) = w^2/4.
    kind "custom" must supply `conjugate_barrier`, a barrier for the
    epigraph block {(w_i, o): o >= f_i*(w_i)} of dimension n_i + 1.
    """

    kind: str
    A_i: np.ndarray  # (n_i, d)
    shift: np.ndarray  # (n_i,)
    conjugate_barrier: BarrierDescriptor | None = None

    def __post_init__(self):
        object.__setattr__(self, "A_i", np.atleast_2d(np.asarray(self.A_i, dtype=float)))
        object.__setattr__(
            self, "shift", np.atleast_1d(np.asarray(self.shift, dtype=float))
        )

    @property
    def arity(self) -> int:
        return self.A_i.shape[0]


@dataclass(frozen=True)
class PrimalErmSpec:
    losses: tuple[LossTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "losses", tuple(self.losses))
        if not self.losses:
            raise InstanceValidationError("spec has no loss terms")
        d = self.losses[0].A_i.shape[1]
        for i, term in enumerate(self.losses):
            if term.A_i.ndim != 2 or term.A_i.shape[1] != d:
                raise InstanceValidationError(
                    f"loss {i}: A_i must be (n_i, {d}), got {term.A_i.shape}"
                )
            if term.shift.shape != (term.arity,):
                raise InstanceValidationError(
                    f"loss {i}: shift must have shape ({term.arity},)"
                )
            if term.kind == "square":
                if term.arity != 1:
                    raise InstanceValidationError(f"loss {i}: square loss is scalar")
            elif term.kind == "custom":
                cb = term.conjugate_barrier
                if cb is None:
                    raise InstanceValidationError(
                        f"loss {i}: custom loss without a conjugate barrier descriptor"
                    )
                if cb.dim != term.arity + 1:
                    raise InstanceValidationError(
                        f"loss {i}: conjugate barrier dim {cb.dim} != arity+1 = "
                        f"{term.arity + 1}"
                    )
            else:
                raise InstanceValidationError(f"loss {i}: unknown loss kind {term.kind!r}")

    @property
    def d(self) -> int:
        return self.losses[0].A_i.shape[1]


# ---------------------------------------------------------------------------
# standard-form instance


@dataclass
class ErmInstance:
    """min c.T x over the block domain, subject to A.T x = b."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    layout: BlockLayout
    barriers: list[BarrierDescriptor]
    kappa: float
    anchors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.anchors is not None:
            self.anchors = np.asarray(self.anchors, dtype=float)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def validate(self) -> "ErmInstance":
        A = self.A
        if A.ndim != 2 or A.size == 0:
            raise InstanceValidationError(f"A must be a nonempty 2-d matrix, got {A.shape}")
        n, d = A.shape
        if not np.all(np.isfinite(A)):
            bad = np.argwhere(~np.isfinite(A))[0]
            raise InstanceValidationError(f"A[{bad[0]},{bad[1]}] is not finite")
        if self.b.shape != (d,) or not np.all(np.isfinite(self.b)):
            raise InstanceValidationError(f"b must be a finite ({d},) vector")
        if self.c.shape != (n,) or not np.all(np.isfinite(self.c)):
            raise InstanceValidationError(f"c must be a finite ({n},) vector")
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise InstanceValidationError("kappa must be a positive finite scalar")
        if self.layout.n != n:
            raise InstanceValidationError(
                f"layout covers {self.layout.n} coordinates, A has {n} rows"
            )
        if len(self.barriers) != self.layout.m:
            raise InstanceValidationError(
                f"{len(self.barriers)} barriers for {self.layout.m} blocks"
            )
        for i, bar in enumerate(self.barriers):
            size = self.layout.sizes[i]
            if bar.dim != size:
                raise InstanceValidationError(
                    f"block {i}: barrier dim {bar.dim} != block size {size}"
                )
            if size > BLOCK_DIM_CAP:
                raise InstanceValidationError(
                    f"block {i}: size {size} exceeds the cap {BLOCK_DIM_CAP}"
                )
        peak = float(np.abs(A).max())
        if peak > self.kappa * (1.0 + 1e-12):
            ij = np.argwhere(np.abs(A) >= peak)[0]
            raise InstanceValidationError(
                f"entry A[{ij[0]},{ij[1]}] = {A[ij[0], ij[1]]:.6g} exceeds kappa = "
                f"{self.kappa:.6g}"
            )
        lo = float(np.linalg.eigvalsh(gram(A))[0])
        if lo < (1.0 / self.kappa) * (1.0 - 1e-9):
            raise InstanceValidationError(
                f"smallest eigenvalue of A^T A is {lo:.6g} < 1/kappa = "
                f"{1.0 / self.kappa:.6g}"
            )
        if self.anchors is not None:
            if self.anchors.shape != (n,):
                raise InstanceValidationError(f"anchors must have shape ({n},)")
            for i, bar in enumerate(self.barriers):
                sl = self.layout.block_slice(i)
                try:
                    barrier_eval(bar, self.anchors[sl])
                except NotInteriorError:
                    raise InstanceValidationError(
                        f"anchor for block {i} is not strictly interior"
                    ) from None
        return self


def dualize(p: PrimalErmSpec) -> ErmInstance:
    """Conjugate transform to standard form: b = 0 and per-block cost [c_i; 1].

    Each loss contributes one block of n_i dual coordinates plus one
    epigraph coordinate whose constraint row is zero, so the output has
    n = sum(n_i + 1) rows and the block count of the input. The primal
    optimum equals minus the resulting instance's optimum.
    """
    d = p.d
    rows: list[np.ndarray] = []
    cost: list[float] = []
    sizes: list[int] = []
    barriers: list[BarrierDescriptor] = []
    for term in p.losses:
        rows.append(term.A_i)
        rows.append(np.zeros((1, d)))
        cost.extend(term.shift.tolist())
        cost.append(1.0)
        sizes.append(term.arity + 1)
        if term.kind == "square":
            barriers.append(epigraph_square(0.25))
        else:
            barriers.append(term.conjugate_barrier)
    A = np.vstack(rows)
    layout = BlockLayout(tuple(sizes))
    lo = float(np.linalg.eigvalsh(gram(A))[0])
    if lo <= 0:
        raise InstanceValidationError(
            f"dualized constraint matrix is rank-deficient (min eigenvalue {lo:.3g}); "
            "the loss maps do not span the parameter space"
        )
    kappa = max(1.0, float(np.abs(A).max()), 1.0 / lo) * (1.0 + 1e-9)
    anchors = np.concatenate([anchor_point(bar) for bar in barriers])
    inst = ErmInstance(
        A=A,
        b=np.zeros(d),
        c=np.asarray(cost, dtype=float),
        layout=layout,
        barriers=barriers,
        kappa=kappa,
        anchors=anchors,
        meta={"source": "dualize", "primal_d": d},
    )
    return inst.validate()


# ---------------------------------------------------------------------------
# serialization helpers


def _barrier_to_json(bar: BarrierDescriptor, where: str) -> dict:
    if bar.kind not in BUILTIN_KINDS:
        raise InstanceFormatError(
            f"{where}: barrier kind {bar.kind!r} has no serializable form"
        )
    params: dict = {}
    if bar.kind == "box":
        params = {
            "lower": bar.params["lower"].tolist(),
            "upper": bar.params["upper"].tolist(),
        }
    elif bar.kind == "ball":
        params = {"radius": bar.params["radius"], "dim": bar.dim}
    elif bar.kind == "epigraph-square":
        params = {"coeff": bar.params["coeff"]}
    elif bar.kind == "nonneg-orthant":
        params = {"dim": bar.dim}
    return {"barrier": bar.kind, "params": params}


def _barrier_from_json(obj: dict, where: str) -> BarrierDescriptor:
    if not isinstance(obj, dict) or "barrier" not in obj:
        raise InstanceFormatError(f"{where}: expected an object with a 'barrier' key")
    kind = obj["barrier"]
    params = obj.get("params", {})
    try:
        if kind == "nonneg-orthant":
            return nonneg_orthant(int(params.get("dim", 1)))
        if kind == "box":
            return box(params["lower"], params["upper"])
        if kind == "ball":
            return ball(float(params["radius"]), int(params["dim"]))
        if kind == "epigraph-square":
            return epigraph_square(float(params.get("coeff", 1.0)))
    except KeyError as exc:
        raise InstanceFormatError(f"{where}/params: missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise InstanceFormatError(f"{where}/params: {exc}") from None
    raise InstanceFormatError(f"{where}/barrier: unknown kind {kind!r}")


def _require(cond: bool, pointer: str, msg: str) -> None:
    if not cond:
        raise InstanceFormatError(f"{pointer}: {msg}")


def save_instance(inst: ErmInstance, path, *, sidecar: bool | None = None) -> Path:
    """Write an instance JSON; A goes to a float64-LE sidecar when large.

    sidecar=None picks automatically (> 16384 entries); True/False forces.
    Returns the JSON path.
    """
    path = Path(path)
    inst.validate()
    if sidecar is None:
        sidecar = inst.A.size > 16384
    blocks = []
    for i, bar in enumerate(inst.barriers):
        sl = inst.layout.block_slice(i)
        item = _barrier_to_json(bar, f"/blocks/{i}")
        item["coords"] = [sl.start, sl.stop]
        blocks.append(item)
    if sidecar:
        bin_path = path.with_suffix(".bin")
        np.asarray(inst.A, dtype="<f8").tofile(bin_path)
        a_field = {"sidecar": bin_path.name, "shape": [inst.n, inst.d]}
    else:
        a_field = inst.A.tolist()
    doc = {
        "meta": {"format": FORMAT_INSTANCE, "version": 1, **inst.meta},
        "blocks": blocks,
        "A": a_field,
        "b": inst.b.tolist(),
        "c": inst.c.tolist(),
        "kappa": inst.kappa,
    }
    if inst.anchors is not None:
        doc["anchors"] = inst.anchors.tolist()
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_instance(path) -> ErmInstance:
    """Read and fully validate an instance document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"/: not valid JSON ({exc})") from None
    _require(isinstance(doc, dict), "/", "top level must be an object")
    meta = doc.get("meta", {})
    _require(isinstance(meta, dict), "/meta", "must be an object")
    _require(
        meta.get("format") == FORMAT_INSTANCE,
        "/meta/format",
        f"expected {FORMAT_INSTANCE!r}, got {meta.get('format')!r}",
    )
    for key in ("blocks", "A", "b", "c", "kappa"):
        _require(key in doc, f"/{key}", "missing")
    a_field = doc["A"]
    if isinstance(a_field, dict):
        _require("sidecar" in a_field and "shape" in a_field, "/A", "sidecar needs shape")
        shape = a_field["shape"]
        _require(
            isinstance(shape, list) and len(shape) == 2,
            "/A/shape",
            "must be [n, d]",
        )
        bin_path = path.parent / a_field["sidecar"]
        _require(bin_path.exists(), "/A/sidecar", f"file {bin_path} not found")
        flat = np.fromfile(bin_path, dtype="<f8")
        _require(
            flat.size == shape[0] * shape[1],
            "/A/sidecar",
            f"holds {flat.size} values, expected {shape[0] * shape[1]}",
        )
        A = flat.reshape(shape[0], shape[1])
    else:
        _require(isinstance(a_field, list) and a_field, "/A", "must be a nonempty array")
        try:
            A = np.asarray(a_field, dtype=float)
        except (TypeError, ValueError):
            raise InstanceFormatError("/A: rows are not numeric arrays") from None
        _require(A.ndim == 2, "/A", "must be two-dimensional")
    blocks = doc["blocks"]
    _require(isinstance(blocks, list) and blocks, "/blocks", "must be a nonempty array")
    sizes = []
    barriers = []
    expect = 0
    for i, item in enumerate(blocks):
        _require(isinstance(item, dict), f"/blocks/{i}", "must be an object")
        coords = item.get("coords")
        _require(
            isinstance(coords, list) and len(coords) == 2,
            f"/blocks/{i}/coords",
            "must be [start, stop]",
        )
        _require(
            coords[0] == expect and coords[1] > coords[0],
            f"/blocks/{i}/coords",
            f"blocks must tile the rows in order; expected start {expect}",
        )
        expect = coords[1]
        sizes.append(coords[1] - coords[0])
        barriers.append(_barrier_from_json(item, f"/blocks/{i}"))
    _require(expect == A.shape[0], "/blocks", f"blocks cover {expect} of {A.shape[0]} rows")
    try:
        b = np.asarray(doc["b"], dtype=float)
        c = np.asarray(doc["c"], dtype=float)
        kappa = float(doc["kappa"])
    except (TypeError, ValueError):
        raise InstanceFormatError("/b,/c,/kappa: must be numeric") from None
    anchors = None
    if "anchors" in doc:
        try:
            anchors = np.asarray(doc["anchors"], dtype=float)
        except (TypeError, ValueError):
            raise InstanceFormatError("/anchors: must be numeric") from None
    inst = ErmInstance(
        A=A,
        b=b,
        c=c,
        layout=BlockLayout(tuple(sizes)),
        barriers=barriers,
        kappa=kappa,
        anchors=anchors,
        meta={k: v for k, v in meta.items() if k not in ("format", "version")},
    )
    return inst.validate()


def save_primal_spec(spec: PrimalErmSpec, path) -> Path:
    path = Path(path)
    losses = []
    for i, term in enumerate(spec.losses):
        item = {
            "kind": term.kind,
            "A": term.A_i.tolist(),
            "shift": term.shift.tolist(),
        }
        if term.kind == "custom":
            item["conjugate"] = _barrier_to_json(
                term.conjugate_barrier, f"/losses/{i}/conjugate"
            )
        losses.append(item)
    doc = {"meta": {"format": FORMAT_PRIMAL, "version": 1}, "losses": losses}
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_primal_spec(path) -> PrimalErmSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"/: not valid JSON ({exc})") from None
    _require(isinstance(doc, dict), "/", "top level must be an object")
    meta = doc.get("meta", {})
    _require(
        isinstance(meta, dict) and meta.get("format") == FORMAT_PRIMAL,
        "/meta/format",
        f"expected {FORMAT_PRIMAL!r}",
    )
    raw = doc.get("losses")
    _require(isinstance(raw, list) and raw, "/losses", "must be a nonempty array")
    terms = []
    for i, item in enumerate(raw):
        _require(isinstance(item, dict), f"/losses/{i}", "must be an object")
        kind = item.get("kind")
        _require(kind in ("square", "custom"), f"/losses/{i}/kind", f"unknown {kind!r}")
        try:
            A_i = np.asarray(item["A"], dtype=float)
            shift = np.asarray(item["shift"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise InstanceFormatError(f"/losses/{i}: needs numeric A and shift") from None
        cb = None
        if kind == "custom":
            _require("conjugate" in item, f"/losses/{i}/conjugate", "missing")
            cb = _barrier_from_json(item["conjugate"], f"/losses/{i}/conjugate")
        terms.append(LossTerm(kind, A_i, shift, cb))
    return PrimalErmSpec(tuple(terms))

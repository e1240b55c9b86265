"""Multi-dimensional fields and the kernel execution engine.

A :class:`Field` stores one value -- a scalar, a vector or a matrix (its
``data_dims``) -- for every point of a 3-d structured grid.  Axes along
which a field is constant can be masked out so that only a single copy is
kept while the field still behaves as if it had full extent.

Kernels (element-wise operations, per-point matrix-vector products and
user-supplied offset kernels) are applied over an :class:`ExecutionRegion`
that gives the iteration domain and a per-field origin, i.e. the offset
mapping iteration coordinates to field coordinates.

Semantics are defined by the naive per-point loops in ``naive_*`` below:
the optimized execution paths (numpy ufuncs, numba-compiled contractions)
must produce bit-identical results.  In particular the inner sum of
``matvec`` always accumulates in ascending index order.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Field",
    "ExecutionRegion",
    "ShapeError",
    "BoundsError",
    "create_field",
    "constant_field",
    "elementwise",
    "matvec",
    "apply_offset_kernel",
    "naive_elementwise",
    "naive_matvec",
    "region_values",
    "set_op_recorder",
]


class ShapeError(ValueError):
    """Raised for invalid extents or mismatched data_dims."""


class BoundsError(IndexError):
    """Raised when a region/origin/offset combination leaves a field."""


_UFUNCS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
    # not part of the minimal op set, but needed by the flow models
    "max": np.maximum,
}

_PYOPS = {
    "+": lambda x, y: x + y,
    "-": lambda x, y: x - y,
    "*": lambda x, y: x * y,
    "/": lambda x, y: x / y,
    "max": max,
}

# Optional hook used by the benchmark harness to collect analytic
# flop/byte counts of every kernel launched through this module.
_RECORDER = None


def set_op_recorder(recorder) -> None:
    """Install (or clear, with None) the global operation recorder."""
    global _RECORDER
    _RECORDER = recorder


class Field:
    """Dense 64-bit field over an ``(nx, ny, nz)`` grid.

    Attributes
    ----------
    data : ndarray
        Stored values, shape ``stored_shape + data_dims``.  Masked axes
        have stored extent 1.
    mask : (bool, bool, bool)
        True marks an axis that is actually stored; False marks an axis
        along which the field is replicated (any logical index maps to
        the single stored slot).
    data_dims : tuple
        Per-grid-point tensor shape: ``()`` scalar, ``(m,)`` vector or
        ``(m, n)`` matrix.
    """

    __slots__ = ("data", "mask", "data_dims", "_mt")

    def __init__(self, data: np.ndarray, mask: tuple, data_dims: tuple):
        self.data = data
        self.mask = tuple(bool(m) for m in mask)
        self.data_dims = tuple(int(d) for d in data_dims)
        self._mt = None  # cached transposed copy for matrix fields

    @property
    def stored_shape(self) -> tuple:
        return self.data.shape[:3]

    @property
    def stored_size(self) -> int:
        return self.data.size

    def at(self, i: int, j: int, k: int = 0):
        """Value at a logical grid point (indices on masked axes are free)."""
        idx = []
        for ax, (stored, ii) in enumerate(zip(self.mask, (i, j, k))):
            if not stored:
                idx.append(0)
            else:
                if not 0 <= ii < self.data.shape[ax]:
                    raise BoundsError(
                        f"index {ii} out of range for stored axis {ax} "
                        f"(extent {self.data.shape[ax]})"
                    )
                idx.append(ii)
        val = self.data[tuple(idx)]
        if self.data_dims == ():
            return float(val)
        return np.array(val)

    def fill(self, value: float) -> None:
        self.data.fill(value)

    def copy(self) -> "Field":
        return Field(self.data.copy(), self.mask, self.data_dims)

    @classmethod
    def from_array(cls, values: np.ndarray, mask=(True, True, True), data_dims=()) -> "Field":
        """Wrap an array of shape ``stored_shape + data_dims`` as a field."""
        mask = _normalize_mask(mask)
        data_dims = tuple(int(d) for d in data_dims)
        nstored = sum(mask)
        arr = np.ascontiguousarray(values, dtype=np.float64)
        expect_rank = nstored + len(data_dims)
        if arr.ndim != expect_rank:
            raise ShapeError(
                f"array rank {arr.ndim} does not match {nstored} stored axes "
                f"+ data_dims {data_dims}"
            )
        full_shape = []
        pos = 0
        for stored in mask:
            if stored:
                full_shape.append(arr.shape[pos])
                pos += 1
            else:
                full_shape.append(1)
        arr = arr.reshape(tuple(full_shape) + data_dims)
        return cls(arr, mask, data_dims)

    def __repr__(self):
        return (
            f"Field(stored={self.stored_shape}, data_dims={self.data_dims}, "
            f"mask={self.mask})"
        )


def _normalize_mask(mask) -> tuple:
    if mask is None:
        return (True, True, True)
    mask = tuple(bool(m) for m in mask)
    if len(mask) != 3:
        raise ShapeError("mask must have one entry per grid axis")
    return mask


def create_field(shape, data_dims=(), mask=None, fill: float = 0.0) -> Field:
    """Allocate a field; ``shape`` lists extents of the stored axes only.

    ``create_field((4, 4), data_dims=(3, 2), mask=[True, True, False])``
    stores 4*4 points of 3x2 matrices and presents arbitrary extent in z.
    """
    mask = _normalize_mask(mask)
    shape = tuple(int(s) for s in shape)
    data_dims = tuple(int(d) for d in data_dims)
    if len(shape) != sum(mask):
        raise ShapeError(
            f"shape {shape} must list exactly the {sum(mask)} stored axes"
        )
    if any(s <= 0 for s in shape):
        raise ShapeError(f"grid extents must be positive, got {shape}")
    if len(data_dims) > 2:
        raise ShapeError("data_dims of rank > 2 are not supported")
    if any(d <= 0 for d in data_dims):
        raise ShapeError(f"data_dims entries must be positive, got {data_dims}")
    full = []
    it = iter(shape)
    for stored in mask:
        full.append(next(it) if stored else 1)
    data = np.full(tuple(full) + data_dims, float(fill), dtype=np.float64)
    return Field(data, mask, data_dims)


def constant_field(tensor) -> Field:
    """Field replicated along all grid axes (one stored tensor)."""
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError("data_dims of rank > 2 are not supported")
    return Field(
        np.ascontiguousarray(arr.reshape((1, 1, 1) + arr.shape)),
        (False, False, False),
        arr.shape,
    )


class ExecutionRegion:
    """Iteration domain plus per-field origins.

    ``origins`` maps operand names (the argument names of the kernel being
    applied, e.g. ``"a"``, ``"b"``, ``"out"`` for element-wise operations)
    to ``(ox, oy, oz)`` offsets.  The key ``"_all_"`` provides a default
    for unlisted fields; otherwise the origin is ``(0, 0, 0)``.
    """

    __slots__ = ("domain", "origins")

    def __init__(self, domain, origins: Mapping[str, tuple] | None = None):
        domain = tuple(int(d) for d in domain)
        if len(domain) != 3 or any(d <= 0 for d in domain):
            raise ShapeError(f"domain must be three positive extents, got {domain}")
        self.domain = domain
        self.origins = {k: tuple(int(o) for o in v) for k, v in (origins or {}).items()}

    def origin_for(self, name: str) -> tuple:
        if name in self.origins:
            return self.origins[name]
        return self.origins.get("_all_", (0, 0, 0))

    def __repr__(self):
        return f"ExecutionRegion(domain={self.domain}, origins={self.origins})"


def region(domain, **origins) -> ExecutionRegion:
    """Shorthand constructor used throughout the solver."""
    return ExecutionRegion(domain, origins)


def _check_bounds(field: Field, name: str, origin, domain, offsets=((0, 0, 0),)) -> None:
    for ax in range(3):
        if not field.mask[ax]:
            continue  # replicated axis accepts any index
        lo = min(off[ax] for off in offsets)
        hi = max(off[ax] for off in offsets)
        start = origin[ax] + lo
        stop = origin[ax] + domain[ax] - 1 + hi
        if start < 0 or stop >= field.data.shape[ax]:
            raise BoundsError(
                f"field '{name}': axis {ax} accesses [{start}, {stop}] outside "
                f"stored extent {field.data.shape[ax]} "
                f"(origin={origin}, domain={domain})"
            )


def _read_view(field: Field, name: str, rgn: ExecutionRegion, shift=(0, 0, 0)) -> np.ndarray:
    """Broadcast view of shape ``domain + data_dims`` for an input operand."""
    origin = tuple(o + s for o, s in zip(rgn.origin_for(name), shift))
    _check_bounds(field, name, origin, rgn.domain)
    index = []
    for ax in range(3):
        if field.mask[ax]:
            index.append(slice(origin[ax], origin[ax] + rgn.domain[ax]))
        else:
            index.append(slice(0, 1))
    view = field.data[tuple(index)]
    return np.broadcast_to(view, rgn.domain + field.data_dims)


def _write_view(field: Field, name: str, rgn: ExecutionRegion) -> np.ndarray:
    """Writable view for an output operand (one writer per stored cell)."""
    origin = rgn.origin_for(name)
    _check_bounds(field, name, origin, rgn.domain)
    index = []
    for ax in range(3):
        if field.mask[ax]:
            index.append(slice(origin[ax], origin[ax] + rgn.domain[ax]))
        elif rgn.domain[ax] == 1:
            index.append(slice(0, 1))
        else:
            raise ShapeError(
                f"output '{name}' is masked along axis {ax} but the domain "
                f"extent there is {rgn.domain[ax]}; a masked output cell "
                "would be written more than once"
            )
    return field.data[tuple(index)]


def _record(kind: str, op: str, rgn: ExecutionRegion, flops: int, nbytes: int) -> None:
    if _RECORDER is not None:
        _RECORDER.record(kind, op, rgn, flops, nbytes)


def region_values(field: Field, rgn: ExecutionRegion, name: str = "_all_") -> np.ndarray:
    """Read-only broadcast view of a field over a region (host-side use)."""
    return _read_view(field, name, rgn)


# ---------------------------------------------------------------------------
# element-wise operations


def elementwise(op: str, a, b, out: Field, rgn: ExecutionRegion) -> None:
    """Pointwise ``out = a <op> b`` over the region.

    ``a`` and ``b`` are fields with the same ``data_dims`` as ``out``, or
    scalars (python numbers / scalar fields), which broadcast to every
    tensor component.  Equivalent to the per-component unrolled loop.
    """
    if op not in _UFUNCS:
        raise ShapeError(f"unsupported element-wise op {op!r}")
    operands = []
    for name, operand in (("a", a), ("b", b)):
        if isinstance(operand, Field):
            if operand.data_dims == out.data_dims:
                view = _read_view(operand, name, rgn)
            elif operand.data_dims == ():
                view = _read_view(operand, name, rgn)
                view = view.reshape(view.shape + (1,) * len(out.data_dims))
            else:
                raise ShapeError(
                    f"operand '{name}' data_dims {operand.data_dims} do not "
                    f"match output data_dims {out.data_dims}"
                )
        else:
            view = float(operand)
        operands.append(view)
    ov = _write_view(out, "out", rgn)
    _UFUNCS[op](operands[0], operands[1], out=ov)
    if _RECORDER is not None:
        dx, dy, dz = rgn.domain
        npts = dx * dy * dz
        ncomp = 1
        for d in out.data_dims:
            ncomp *= d
        per_point = ncomp  # output write
        for operand in (a, b):
            if isinstance(operand, Field):
                per_point += ncomp if operand.data_dims == out.data_dims else 1
        _record("elementwise", op, rgn, npts * ncomp, 8 * npts * per_point)


def naive_elementwise(op: str, a, b, out: Field, rgn: ExecutionRegion) -> None:
    """Reference implementation: explicit per-point, per-component loops."""
    f = _PYOPS[op]
    dx, dy, dz = rgn.domain
    comps = list(np.ndindex(out.data_dims)) if out.data_dims else [()]

    def fetch(operand, name, i, j, k, comp):
        if not isinstance(operand, Field):
            return float(operand)
        o = rgn.origin_for(name)
        idx = tuple(
            (o[ax] + p) if operand.mask[ax] else 0 for ax, p in enumerate((i, j, k))
        )
        if operand.data_dims == ():
            return float(operand.data[idx])
        return float(operand.data[idx + comp])

    oo = rgn.origin_for("out")
    for i in range(dx):
        for j in range(dy):
            for k in range(dz):
                tgt = tuple(
                    (oo[ax] + p) if out.mask[ax] else 0
                    for ax, p in enumerate((i, j, k))
                )
                for comp in comps:
                    va = fetch(a, "a", i, j, k, comp)
                    vb = fetch(b, "b", i, j, k, comp)
                    out.data[tgt + comp] = f(va, vb)


# ---------------------------------------------------------------------------
# per-point matrix-vector products

_NUMBA_DISABLED = bool(int(os.environ.get("DGSWE_NO_NUMBA", "0")))

if not _NUMBA_DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        _NUMBA_DISABLED = True

if not _NUMBA_DISABLED:

    @njit(cache=True)
    def _mv_gen(M, v, out, transpose):
        # general per-point matrices; out[p,i] = sum_j M[p,i,j] v[p,j]
        for ix in range(out.shape[0]):
            for iy in range(out.shape[1]):
                for iz in range(out.shape[2]):
                    Mp = M[ix, iy, iz]
                    vp = v[ix, iy, iz]
                    op = out[ix, iy, iz]
                    if transpose:
                        for i in range(op.shape[0]):
                            s = 0.0
                            for j in range(vp.shape[0]):
                                s += Mp[j, i] * vp[j]
                            op[i] = s
                    else:
                        for i in range(op.shape[0]):
                            s = 0.0
                            for j in range(vp.shape[0]):
                                s += Mp[i, j] * vp[j]
                            op[i] = s

    @njit(cache=True, inline="always")
    def _mv_point(MC, MR, vp, op):
        # op[i] = sum_j MC[j, i] * vp[j], ascending j for every output.
        # MC has contiguous per-j rows; MR (= MC transposed) serves the
        # scalar remainder with contiguous per-i rows.  Independent
        # accumulator blocks keep the superscalar units busy.
        m = op.shape[0]
        n = vp.shape[0]
        i0 = 0
        while i0 + 8 <= m:
            s0 = 0.0; s1 = 0.0; s2 = 0.0; s3 = 0.0
            s4 = 0.0; s5 = 0.0; s6 = 0.0; s7 = 0.0
            for j in range(n):
                vj = vp[j]
                s0 += MC[j, i0] * vj
                s1 += MC[j, i0 + 1] * vj
                s2 += MC[j, i0 + 2] * vj
                s3 += MC[j, i0 + 3] * vj
                s4 += MC[j, i0 + 4] * vj
                s5 += MC[j, i0 + 5] * vj
                s6 += MC[j, i0 + 6] * vj
                s7 += MC[j, i0 + 7] * vj
            op[i0] = s0; op[i0 + 1] = s1; op[i0 + 2] = s2; op[i0 + 3] = s3
            op[i0 + 4] = s4; op[i0 + 5] = s5; op[i0 + 6] = s6; op[i0 + 7] = s7
            i0 += 8
        if i0 + 4 <= m:
            s0 = 0.0; s1 = 0.0; s2 = 0.0; s3 = 0.0
            for j in range(n):
                vj = vp[j]
                s0 += MC[j, i0] * vj
                s1 += MC[j, i0 + 1] * vj
                s2 += MC[j, i0 + 2] * vj
                s3 += MC[j, i0 + 3] * vj
            op[i0] = s0; op[i0 + 1] = s1; op[i0 + 2] = s2; op[i0 + 3] = s3
            i0 += 4
        for i in range(i0, m):
            s = 0.0
            for j in range(n):
                s += MR[i, j] * vp[j]
            op[i] = s

    @njit(cache=True)
    def _mv_const(MC, MR, v, out):
        # one matrix shared by every grid point
        for ix in range(out.shape[0]):
            for iy in range(out.shape[1]):
                for iz in range(out.shape[2]):
                    _mv_point(MC, MR, v[ix, iy, iz], out[ix, iy, iz])

    @njit(cache=True)
    def _mv_rows(MC3, MR3, v, out):
        # matrix varies along the y axis only (per-latitude-row operators)
        for ix in range(out.shape[0]):
            for iy in range(out.shape[1]):
                MC = MC3[iy]
                MR = MR3[iy]
                for iz in range(out.shape[2]):
                    _mv_point(MC, MR, v[ix, iy, iz], out[ix, iy, iz])

else:  # pure-numpy fallback, same ascending-index accumulation

    def _mv_gen(M, v, out, transpose):
        if transpose:
            np.multiply(M[..., 0, :], v[..., 0:1], out=out)
            for j in range(1, M.shape[3]):
                out += M[..., j, :] * v[..., j : j + 1]
        else:
            np.multiply(M[..., :, 0], v[..., 0:1], out=out)
            for j in range(1, M.shape[4]):
                out += M[..., :, j] * v[..., j : j + 1]

    _mv_const = None
    _mv_rows = None


def _transposed_copy(matrix: Field) -> np.ndarray:
    if matrix._mt is None:
        matrix._mt = np.ascontiguousarray(np.swapaxes(matrix.data, -1, -2))
    return matrix._mt


def matvec(
    matrix: Field,
    vec: Field,
    out: Field,
    rgn: ExecutionRegion,
    transpose: bool = False,
) -> None:
    """Per-point product ``out = matrix @ vec`` (or ``matrix.T @ vec``).

    Accumulation runs over the inner dimension in ascending index order,
    in 64-bit floating point, so results are reproducible and identical
    to the naive loop.
    """
    if len(matrix.data_dims) != 2:
        raise ShapeError(f"matrix operand must have rank-2 data_dims, got {matrix.data_dims}")
    m, n = matrix.data_dims
    vdim, odim = ((m, n) if transpose else (n, m))
    if vec.data_dims != (vdim,):
        raise ShapeError(
            f"vector data_dims {vec.data_dims} incompatible with "
            f"{'transposed ' if transpose else ''}matrix {matrix.data_dims}"
        )
    if out.data_dims != (odim,):
        raise ShapeError(
            f"output data_dims {out.data_dims} incompatible with "
            f"{'transposed ' if transpose else ''}matrix {matrix.data_dims}"
        )
    vv = _read_view(vec, "vec", rgn)
    ov = _write_view(out, "out", rgn)
    if _mv_const is not None and matrix.mask == (False, False, False):
        _check_bounds(matrix, "matrix", rgn.origin_for("matrix"), rgn.domain)
        stored = matrix.data[0, 0, 0]
        trans = _transposed_copy(matrix)[0, 0, 0]
        # the j-contiguous operand is the stored matrix when transposing
        MC, MR = (stored, trans) if transpose else (trans, stored)
        _mv_const(MC, MR, vv, ov)
    elif _mv_rows is not None and matrix.mask == (False, True, False):
        oy = rgn.origin_for("matrix")[1]
        _check_bounds(matrix, "matrix", rgn.origin_for("matrix"), rgn.domain)
        stored = matrix.data[0, oy : oy + rgn.domain[1], 0]
        trans = _transposed_copy(matrix)[0, oy : oy + rgn.domain[1], 0]
        MC3, MR3 = (stored, trans) if transpose else (trans, stored)
        _mv_rows(MC3, MR3, vv, ov)
    else:
        Mv = _read_view(matrix, "matrix", rgn)
        _mv_gen(Mv, vv, ov, transpose)
    if _RECORDER is not None:
        dx, dy, dz = rgn.domain
        npts = dx * dy * dz
        _record("matvec", "T" if transpose else "N", rgn, 2 * m * n * npts,
                8 * npts * (m * n + vdim + odim))


def naive_matvec(matrix, vec, out, rgn, transpose=False):
    """Reference implementation with explicit python-level loops."""
    m, n = matrix.data_dims
    dx, dy, dz = rgn.domain

    def point(field, name, i, j, k):
        o = rgn.origin_for(name)
        return tuple(
            (o[ax] + p) if field.mask[ax] else 0 for ax, p in enumerate((i, j, k))
        )

    for i in range(dx):
        for j in range(dy):
            for k in range(dz):
                Mp = matrix.data[point(matrix, "matrix", i, j, k)]
                vp = vec.data[point(vec, "vec", i, j, k)]
                op = point(out, "out", i, j, k)
                if transpose:
                    for col in range(n):
                        s = 0.0
                        for row in range(m):
                            s += float(Mp[row, col]) * float(vp[row])
                        out.data[op + (col,)] = s
                else:
                    for row in range(m):
                        s = 0.0
                        for col in range(n):
                            s += float(Mp[row, col]) * float(vp[col])
                        out.data[op + (row,)] = s


# ---------------------------------------------------------------------------
# generic offset kernels


class _Reader:
    __slots__ = ("field", "origin", "point", "offsets")

    def __init__(self, field, origin, offsets):
        self.field = field
        self.origin = origin
        self.point = (0, 0, 0)
        self.offsets = offsets

    def __getitem__(self, off):
        if off not in self.offsets:
            raise BoundsError(f"read at undeclared offset {off}")
        idx = tuple(
            (self.origin[ax] + self.point[ax] + off[ax]) if self.field.mask[ax] else 0
            for ax in range(3)
        )
        val = self.field.data[idx]
        if self.field.data_dims == ():
            return float(val)
        v = val[...]
        v.flags.writeable = False
        return v


class _Writer(_Reader):
    __slots__ = ()

    def __setitem__(self, off, value):
        if off != (0, 0, 0):
            raise BoundsError("outputs may only be written at offset (0, 0, 0)")
        idx = tuple(
            (self.origin[ax] + self.point[ax]) if self.field.mask[ax] else 0
            for ax in range(3)
        )
        self.field.data[idx] = value


def apply_offset_kernel(
    kernel: Callable,
    fields: Mapping[str, Field],
    outputs: Iterable[str],
    rgn: ExecutionRegion,
    offsets: Mapping[str, Sequence[tuple]] | None = None,
) -> None:
    """Run a per-point kernel reading fields at declared relative offsets.

    The kernel receives one accessor per field (keyword arguments named
    after ``fields``); reads index by relative offset, e.g. ``u[1, 0, 0]``,
    and outputs assign at the center, ``out[0, 0, 0] = ...``.  Vertical
    levels are independent; every output point is written by exactly one
    iteration.
    """
    offsets = dict(offsets or {})
    outputs = set(outputs)
    accessors = {}
    for name, field in fields.items():
        offs = tuple(tuple(o) for o in offsets.get(name, ((0, 0, 0),)))
        origin = rgn.origin_for(name)
        _check_bounds(field, name, origin, rgn.domain, offs)
        cls = _Writer if name in outputs else _Reader
        accessors[name] = cls(field, origin, set(offs) | {(0, 0, 0)} if name in outputs else set(offs))
    dx, dy, dz = rgn.domain
    for i in range(dx):
        for j in range(dy):
            for k in range(dz):
                for acc in accessors.values():
                    acc.point = (i, j, k)
                kernel(**accessors)

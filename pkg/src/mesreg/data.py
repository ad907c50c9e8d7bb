"""Shared domain types, CSV ingestion and model specifications.

A :class:`Dataset` holds the outcome ``y``, the distress variable ``x`` and the
covariate matrices of the VaR and MES parts. A :class:`ModelSpec` fixes the
probability level and the two link functions. Links are either the built-in
:data:`LINEAR` link or a :class:`CustomLink` supplying value and gradient
evaluators.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .exceptions import DimensionError, LevelError, ParseError, SchemaError

INTERCEPT = "1"
INTERCEPT_ONLY = "intercept-only"


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    x: np.ndarray
    z_v: np.ndarray
    z_m: np.ndarray
    v_names: tuple = ()
    m_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(self.y, 1))
        object.__setattr__(self, "x", _frozen(self.x, 1))
        object.__setattr__(self, "z_v", _frozen(self.z_v, 2))
        object.__setattr__(self, "z_m", _frozen(self.z_m, 2))
        if not self.v_names:
            object.__setattr__(self, "v_names", tuple(f"zv{j}" for j in range(self.p)))
        if not self.m_names:
            object.__setattr__(self, "m_names", tuple(f"zm{j}" for j in range(self.q)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z_v.shape[1]

    @property
    def q(self) -> int:
        return self.z_m.shape[1]

    def with_y(self, y) -> "Dataset":
        """Same covariates and distress series, different outcome."""
        return Dataset(y, self.x, self.z_v, self.z_m, self.v_names, self.m_names)


class LinearLink:
    """``v(Z; theta) = Z theta``; the gradient is the covariate row itself."""

    name = "linear"

    def value(self, z, theta):
        return z @ np.asarray(theta, dtype=float)

    def gradient(self, z, theta):
        return z

    def __repr__(self):
        return "LINEAR"


LINEAR = LinearLink()


@dataclass(frozen=True)
class CustomLink:
    """User supplied nonlinear link.

    ``value(z, theta)`` must return the n fitted values and
    ``gradient(z, theta)`` the n x dim matrix of parameter gradients.
    ``start`` is the starting point used by the optimizers.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    start: Sequence[float] | None = None
    name: str = field(default="custom")


def is_linear(link) -> bool:
    return isinstance(link, LinearLink)


@dataclass(frozen=True)
class ModelSpec:
    """Probability level plus the VaR and MES links.

    ``p`` and ``q`` default to the number of covariate columns for linear
    links and to ``link.dim`` for custom ones.
    """

    beta: float
    var_link: object = LINEAR
    mes_link: object = LINEAR
    p: int | None = None
    q: int | None = None

    def dims(self, dataset: Dataset) -> tuple[int, int]:
        p = self.p if self.p is not None else _link_dim(self.var_link, dataset.p)
        q = self.q if self.q is not None else _link_dim(self.mes_link, dataset.q)
        return p, q


def _link_dim(link, ncols):
    return ncols if is_linear(link) else int(link.dim)


def check_level(beta, what="beta"):
    try:
        b = float(beta)
    except (TypeError, ValueError):
        raise LevelError(f"{what} must be a number in (0, 1), got {beta!r}") from None
    if not (0.0 < b < 1.0) or math.isnan(b):
        raise LevelError(f"{what} must lie strictly between 0 and 1, got {beta!r}")
    return b


def _check_link(link, z, dim, label):
    if is_linear(link):
        if dim != z.shape[1]:
            raise DimensionError(
                f"{label}: linear link needs {z.shape[1]} parameters "
                f"(one per covariate column), spec says {dim}")
        return
    for attr in ("value", "gradient"):
        if not callable(getattr(link, attr, None)):
            raise DimensionError(f"{label}: custom link lacks a callable {attr}")
    if link.start is None:
        raise DimensionError(f"{label}: custom links need a start value")
    start = np.asarray(link.start, dtype=float)
    if start.shape != (dim,):
        raise DimensionError(f"{label}: start has shape {start.shape}, expected ({dim},)")
    g = np.asarray(link.gradient(z, start))
    if g.shape != (z.shape[0], dim):
        raise DimensionError(
            f"{label}: gradient has shape {g.shape}, expected ({z.shape[0]}, {dim})")
    v = np.asarray(link.value(z, start))
    if v.shape != (z.shape[0],):
        raise DimensionError(f"{label}: value has shape {v.shape}, expected ({z.shape[0]},)")


def validate(dataset: Dataset, spec: ModelSpec) -> None:
    """Raise on the first violated Dataset/ModelSpec invariant."""
    check_level(spec.beta)
    n = dataset.n
    for name in ("x", "z_v", "z_m"):
        if getattr(dataset, name).shape[0] != n:
            raise DimensionError(
                f"{name} has {getattr(dataset, name).shape[0]} rows, y has {n}")
    for name in ("y", "x", "z_v", "z_m"):
        arr = getattr(dataset, name)
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise ParseError(f"{name} has a non-finite entry at row {int(bad[0]) + 1}",
                             row=int(bad[0]) + 1)
    p, q = spec.dims(dataset)
    _check_link(spec.var_link, dataset.z_v, p, "VaR part")
    _check_link(spec.mes_link, dataset.z_m, q, "MES part")
    if n < p + q + 1:
        raise DimensionError(f"n={n} rows is too small for p+q+1={p + q + 1}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _covariate_list(value, part):
    if value is None:
        raise SchemaError(f"schema lacks the {part} entry")
    if isinstance(value, str):
        if value == INTERCEPT_ONLY:
            return [INTERCEPT]
        value = [v.strip() for v in value.split(",") if v.strip()]
    cols = [str(v) for v in value]
    if not cols:
        raise SchemaError(f"{part} needs at least one covariate column or '{INTERCEPT_ONLY}'")
    return cols


def parse_schema(schema: Mapping) -> dict:
    """Normalise a column-role map into ``{y, x, z_v, z_m}`` with list covariates."""
    for key in ("y", "x"):
        if not schema.get(key):
            raise SchemaError(f"schema must name one '{key}' column")
    return {
        "y": str(schema["y"]),
        "x": str(schema["x"]),
        "z_v": _covariate_list(schema.get("z_v"), "z_v"),
        "z_m": _covariate_list(schema.get("z_m"), "z_m"),
    }


def read_columns(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a headered numeric CSV into float columns.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        if len(set(header)) != len(header):
            raise SchemaError(f"{path} has duplicate column names")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"row {i} has {len(row)} fields, header has {len(header)}", row=i)
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"row {i}, column '{name}': not a number ({cell!r})",
                                     row=i) from None
                if not math.isfinite(v):
                    raise ParseError(f"row {i}, column '{name}': non-finite value ({cell!r})",
                                     row=i)
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, {h: data[:, j] for j, h in enumerate(header)}


def _design(columns, names, n):
    cols = []
    for name in names:
        if name == INTERCEPT:
            cols.append(np.ones(n))
        elif name in columns:
            cols.append(columns[name])
        else:
            raise SchemaError(f"missing column '{name}'")
    return np.column_stack(cols)


def load_csv(path, schema: Mapping) -> Dataset:
    """Load a Dataset from CSV.

    ``schema`` maps the roles ``y`` and ``x`` to column names and ``z_v`` /
    ``z_m`` to lists of column names. The token ``"1"`` inserts an intercept
    column; the string ``"intercept-only"`` is shorthand for ``["1"]``.
    The sample-size requirement ``n >= p + q + 1`` is checked by
    :func:`validate`, which every estimator runs.
    """
    s = parse_schema(schema)
    _, columns = read_columns(path)
    for key in ("y", "x"):
        if s[key] not in columns:
            raise SchemaError(f"missing column '{s[key]}' (role {key})")
    n = len(columns[s["y"]])
    ds = Dataset(
        y=columns[s["y"]],
        x=columns[s["x"]],
        z_v=_design(columns, s["z_v"], n),
        z_m=_design(columns, s["z_m"], n),
        v_names=tuple("intercept" if c == INTERCEPT else c for c in s["z_v"]),
        m_names=tuple("intercept" if c == INTERCEPT else c for c in s["z_m"]),
    )
    if n == 0:
        raise DimensionError(f"{path} has no data rows")
    return ds


def save_csv(dataset: Dataset, path) -> dict:
    """Write all numeric content to CSV and return the schema that reloads it.

    Floats are written with ``repr`` (shortest round-trip form), so
    ``load_csv(path, save_csv(ds, path))`` reproduces every value bit for bit.
    """
    v_cols = [f"zv_{j}" for j in range(dataset.p)]
    m_cols = [f"zm_{j}" for j in range(dataset.q)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "x", *v_cols, *m_cols])
        for t in range(dataset.n):
            w.writerow([repr(float(v)) for v in
                        (dataset.y[t], dataset.x[t], *dataset.z_v[t], *dataset.z_m[t])])
    return {"y": "y", "x": "x", "z_v": v_cols, "z_m": m_cols}

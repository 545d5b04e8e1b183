"""Operator catalog: the full operator set with arities, attribute schemas,
constraint kinds, FLOP models, and dtype capability flags.

This is the single source of truth consulted by the graph builder, the shape
solver, the forward shape oracle, and the source emitter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence


class CatalogError(Exception):
    pass


class NotFound(CatalogError):
    """Unknown operator name."""


class EmptySubset(CatalogError):
    """An operator subset resolved to zero candidates."""


class ShapeMismatch(CatalogError):
    """Shapes handed to a FLOP model are inconsistent with the operator."""


class Category(str, Enum):
    CREATE = "Create"
    ELEMENTWISE_BINARY = "ElementwiseBinary"
    ELEMENTWISE_TERNARY = "ElementwiseTernary"
    REDUCTION = "Reduction"
    MATRIX = "Matrix"
    UNARY_ACTIVATION = "UnaryActivation"
    UNARY_WITH_DIM = "UnaryWithDim"
    UNARY_MATH = "UnaryMath"
    CUMULATIVE = "Cumulative"
    NORMALIZATION = "Normalization"
    POOL1D = "Pool1d"
    POOL2D = "Pool2d"
    POOL3D = "Pool3d"
    CONV1D = "Conv1d"
    CONV2D = "Conv2d"
    CONV3D = "Conv3d"
    CONV_TRANSPOSE1D = "ConvTranspose1d"
    CONV_TRANSPOSE2D = "ConvTranspose2d"
    CONV_TRANSPOSE3D = "ConvTranspose3d"
    VARIADIC = "Variadic"


class ConstraintKind(str, Enum):
    """Which per-node constraint family the shape solver applies."""

    BROADCAST = "broadcast"              # elementwise binary / ternary
    REDUCE = "reduce"                    # dim/keepdim reductions
    DIM_PRESERVING = "dim_preserving"    # cumulative / softmax: same shape, needs a valid axis
    MATMUL = "matmul"
    BMM = "bmm"
    TRANSPOSE = "transpose"              # swap last two dims
    LAST_TWO_PRESERVING = "last_two_preserving"  # triu / tril: same shape, order >= 2
    CONV = "conv"
    CONV_TRANSPOSE = "conv_transpose"
    POOL = "pool"
    NORM_BATCH = "norm_batch"
    NORM_LAYER = "norm_layer"
    NORM_GROUP = "norm_group"
    NORM_INSTANCE = "norm_instance"
    ELEMENTWISE_UNARY = "elementwise_unary"  # shape-preserving, any order
    CAT = "cat"
    STACK = "stack"


class DtypeRule(str, Enum):
    """How integer-typedness propagates through an operator's output."""

    ALWAYS_FLOAT = "always_float"
    ALWAYS_INT = "always_int"
    PRESERVE = "preserve"  # integer output iff every tensor input is integer


# Sentinel arity for Cat/Stack ("at least 2" inputs).
AT_LEAST_2 = -2

# Attribute domains. Small domains keep the constraint problem tractable.
KERNEL_RANGE = (1, 7)
STRIDE_RANGE = (1, 4)
PADDING_RANGE = (0, 3)
DILATION_RANGE = (1, 4)
GROUPS_CHOICES = (1, 2, 4)
VARIADIC_COUNTS = (2, 3, 4)
CLAMP_MIN_GRID = (-2.0, -1.0, -0.5, -0.25)
CLAMP_MAX_GRID = (0.25, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class AttrSpec:
    name: str
    domain: str


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    qualified_name: str
    category: Category
    arity: int  # fixed input count, or AT_LEAST_2
    attr_schema: tuple[AttrSpec, ...]
    constraint_kind: Optional[ConstraintKind]
    flop_model: str
    # Runtime behavior flags (pinned against the reference framework on CPU).
    dtype_rule: DtypeRule = DtypeRule.PRESERVE
    accepts_int: bool = True
    same_dtype_required: bool = False
    returns_indexed_tuple: bool = False  # call yields (values, indices); emitter takes .values

    @property
    def is_create(self) -> bool:
        return self.category is Category.CREATE

    @property
    def is_variadic(self) -> bool:
        return self.arity == AT_LEAST_2

    @property
    def spatial_dims(self) -> int:
        """Spatial dimensionality for conv/pool families, else 0."""
        return _SPATIAL.get(self.category, 0)


_SPATIAL = {
    Category.POOL1D: 1,
    Category.POOL2D: 2,
    Category.POOL3D: 3,
    Category.CONV1D: 1,
    Category.CONV2D: 2,
    Category.CONV3D: 3,
    Category.CONV_TRANSPOSE1D: 1,
    Category.CONV_TRANSPOSE2D: 2,
    Category.CONV_TRANSPOSE3D: 3,
}

_DIM_ATTR = (AttrSpec("dim", "axis"),)
_REDUCE_ATTRS = (AttrSpec("dim", "axis"), AttrSpec("keepdim", "bool"))


def _conv_attrs(m: int) -> tuple[AttrSpec, ...]:
    ks = tuple(AttrSpec(f"k{j + 1}", f"int[{KERNEL_RANGE[0]},{KERNEL_RANGE[1]}]") for j in range(m))
    return ks + (
        AttrSpec("stride", f"int[{STRIDE_RANGE[0]},{STRIDE_RANGE[1]}]"),
        AttrSpec("padding", f"int[{PADDING_RANGE[0]},{PADDING_RANGE[1]}]"),
        AttrSpec("dilation", f"int[{DILATION_RANGE[0]},{DILATION_RANGE[1]}]"),
        AttrSpec("groups", "choice{1,2,4}"),
    )


def _pool_attrs(m: int) -> tuple[AttrSpec, ...]:
    ks = tuple(AttrSpec(f"k{j + 1}", f"int[{KERNEL_RANGE[0]},{KERNEL_RANGE[1]}]") for j in range(m))
    return ks + (
        AttrSpec("stride", f"int[{STRIDE_RANGE[0]},{STRIDE_RANGE[1]}]"),
        AttrSpec("padding", f"int[{PADDING_RANGE[0]},{PADDING_RANGE[1]}]"),
    )


def _spec(name, qualified, category, arity, attrs=(), kind=None, flops="numel_out", **flags):
    return OperatorSpec(
        name=name,
        qualified_name=qualified,
        category=category,
        arity=arity,
        attr_schema=tuple(attrs),
        constraint_kind=kind,
        flop_model=flops,
        **flags,
    )


def _build_table() -> list[OperatorSpec]:
    C = Category
    K = ConstraintKind
    D = DtypeRule
    rows: list[OperatorSpec] = []

    # -- creation ops ------------------------------------------------------
    for name, qn in (("Randn", "torch.randn"), ("Ones", "torch.ones"), ("Zeros", "torch.zeros")):
        rows.append(_spec(name, qn, C.CREATE, 0, flops="zero", dtype_rule=D.ALWAYS_FLOAT))

    # -- elementwise binary ------------------------------------------------
    for name, qn, rule in (
        ("Add", "torch.add", D.PRESERVE),
        ("Mul", "torch.mul", D.PRESERVE),
        ("Sub", "torch.sub", D.PRESERVE),
        ("Div", "torch.div", D.ALWAYS_FLOAT),
        ("Maximum", "torch.maximum", D.PRESERVE),
        ("Minimum", "torch.minimum", D.PRESERVE),
    ):
        rows.append(_spec(name, qn, C.ELEMENTWISE_BINARY, 2, kind=K.BROADCAST, dtype_rule=rule))

    # -- elementwise ternary -----------------------------------------------
    rows.append(
        _spec("Lerp", "torch.lerp", C.ELEMENTWISE_TERNARY, 3, kind=K.BROADCAST,
              dtype_rule=D.ALWAYS_FLOAT, accepts_int=False)
    )

    # -- reductions ----------------------------------------------------------
    for name, qn, rule, acc, tup in (
        ("Max", "torch.max", D.PRESERVE, True, True),
        ("Min", "torch.min", D.PRESERVE, True, True),
        ("Sum", "torch.sum", D.PRESERVE, True, False),
        ("Mean", "torch.mean", D.ALWAYS_FLOAT, False, False),
        ("ArgMax", "torch.argmax", D.ALWAYS_INT, True, False),
        ("ArgMin", "torch.argmin", D.ALWAYS_INT, True, False),
        ("Var", "torch.var", D.ALWAYS_FLOAT, False, False),
        ("Norm", "torch.norm", D.ALWAYS_FLOAT, False, False),
    ):
        rows.append(
            _spec(name, qn, C.REDUCTION, 1, attrs=_REDUCE_ATTRS, kind=K.REDUCE,
                  flops="numel_in", dtype_rule=rule, accepts_int=acc, returns_indexed_tuple=tup)
        )

    # -- matrix ops ----------------------------------------------------------
    rows.append(_spec("Matmul", "torch.matmul", C.MATRIX, 2, kind=K.MATMUL,
                      flops="matmul", same_dtype_required=True))
    rows.append(_spec("Bmm", "torch.bmm", C.MATRIX, 2, kind=K.BMM,
                      flops="matmul", same_dtype_required=True))
    rows.append(_spec("Transpose", "torch.transpose", C.MATRIX, 1,
                      attrs=(AttrSpec("dim0", "axis"), AttrSpec("dim1", "axis")),
                      kind=K.TRANSPOSE, flops="zero"))
    rows.append(_spec("Triu", "torch.triu", C.MATRIX, 1, kind=K.LAST_TWO_PRESERVING, flops="zero"))
    rows.append(_spec("Tril", "torch.tril", C.MATRIX, 1, kind=K.LAST_TWO_PRESERVING, flops="zero"))

    # -- unary activations ---------------------------------------------------
    for name, qn, rule, acc in (
        ("ReLU", "torch.relu", D.PRESERVE, True),
        ("LeakyReLU", "torch.nn.functional.leaky_relu", D.ALWAYS_FLOAT, False),
        ("Sigmoid", "torch.sigmoid", D.ALWAYS_FLOAT, True),
        ("Tanh", "torch.tanh", D.ALWAYS_FLOAT, True),
        ("Swish", "torch.nn.functional.silu", D.ALWAYS_FLOAT, False),
        ("GELU", "torch.nn.functional.gelu", D.ALWAYS_FLOAT, False),
        ("SELU", "torch.selu", D.ALWAYS_FLOAT, False),
        ("ELU", "torch.nn.functional.elu", D.ALWAYS_FLOAT, False),
        ("Hardsigmoid", "torch.nn.functional.hardsigmoid", D.ALWAYS_FLOAT, False),
        ("HardTanh", "torch.nn.functional.hardtanh", D.PRESERVE, True),
        ("Softplus", "torch.nn.functional.softplus", D.ALWAYS_FLOAT, False),
        ("Softsign", "torch.nn.functional.softsign", D.ALWAYS_FLOAT, True),
        ("LogSigmoid", "torch.nn.functional.logsigmoid", D.ALWAYS_FLOAT, False),
    ):
        rows.append(_spec(name, qn, C.UNARY_ACTIVATION, 1, kind=K.ELEMENTWISE_UNARY,
                          dtype_rule=rule, accepts_int=acc))
    rows.append(
        _spec("Clamp", "torch.clamp", C.UNARY_ACTIVATION, 1,
              attrs=(AttrSpec("min", "float-grid"), AttrSpec("max", "float-grid")),
              kind=K.ELEMENTWISE_UNARY, dtype_rule=D.ALWAYS_FLOAT)
    )

    # -- unary with dimension --------------------------------------------------
    for name, qn in (("Softmax", "torch.softmax"), ("LogSoftmax", "torch.log_softmax")):
        rows.append(_spec(name, qn, C.UNARY_WITH_DIM, 1, attrs=_DIM_ATTR, kind=K.DIM_PRESERVING,
                          dtype_rule=D.ALWAYS_FLOAT, accepts_int=False))

    # -- unary math -------------------------------------------------------------
    for name, qn, rule in (
        ("Cos", "torch.cos", D.ALWAYS_FLOAT),
        ("Sin", "torch.sin", D.ALWAYS_FLOAT),
        ("Exp2", "torch.exp2", D.ALWAYS_FLOAT),
        ("Abs", "torch.abs", D.PRESERVE),
    ):
        rows.append(_spec(name, qn, C.UNARY_MATH, 1, kind=K.ELEMENTWISE_UNARY, dtype_rule=rule))

    # -- cumulative ---------------------------------------------------------------
    for name, qn, tup in (
        ("CumMax", "torch.cummax", True),
        ("CumMin", "torch.cummin", True),
        ("CumSum", "torch.cumsum", False),
    ):
        rows.append(_spec(name, qn, C.CUMULATIVE, 1, attrs=_DIM_ATTR, kind=K.DIM_PRESERVING,
                          flops="numel_in", returns_indexed_tuple=tup))

    # -- normalization ---------------------------------------------------------
    rows.append(_spec("BatchNorm", "torch.nn.functional.batch_norm", C.NORMALIZATION, 1,
                      kind=K.NORM_BATCH, dtype_rule=D.ALWAYS_FLOAT, accepts_int=False))
    rows.append(_spec("LayerNorm", "torch.nn.functional.layer_norm", C.NORMALIZATION, 1,
                      attrs=(AttrSpec("norm_dims", "int[1,order]"),),
                      kind=K.NORM_LAYER, dtype_rule=D.ALWAYS_FLOAT, accepts_int=False))
    rows.append(_spec("GroupNorm", "torch.nn.functional.group_norm", C.NORMALIZATION, 1,
                      attrs=(AttrSpec("groups", "choice{1,2,4}"),),
                      kind=K.NORM_GROUP, dtype_rule=D.ALWAYS_FLOAT, accepts_int=False))
    rows.append(_spec("InstanceNorm", "torch.nn.functional.instance_norm", C.NORMALIZATION, 1,
                      kind=K.NORM_INSTANCE, dtype_rule=D.ALWAYS_FLOAT, accepts_int=False))

    # -- pooling -------------------------------------------------------------------
    for m, cat in ((1, C.POOL1D), (2, C.POOL2D), (3, C.POOL3D)):
        rows.append(_spec(f"AvgPool{m}d", f"torch.nn.functional.avg_pool{m}d", cat, 1,
                          attrs=_pool_attrs(m), kind=K.POOL, flops="pool"))
        rows.append(_spec(f"MaxPool{m}d", f"torch.nn.functional.max_pool{m}d", cat, 1,
                          attrs=_pool_attrs(m), kind=K.POOL, flops="pool", accepts_int=False))

    # -- convolution ------------------------------------------------------------------
    for m, cat in ((1, C.CONV1D), (2, C.CONV2D), (3, C.CONV3D)):
        rows.append(_spec(f"Conv{m}d", f"torch.nn.functional.conv{m}d", cat, 2,
                          attrs=_conv_attrs(m), kind=K.CONV, flops="conv",
                          dtype_rule=D.ALWAYS_FLOAT, accepts_int=False, same_dtype_required=True))
    for m, cat in ((1, C.CONV_TRANSPOSE1D), (2, C.CONV_TRANSPOSE2D), (3, C.CONV_TRANSPOSE3D)):
        rows.append(_spec(f"ConvTranspose{m}d", f"torch.nn.functional.conv_transpose{m}d", cat, 2,
                          attrs=_conv_attrs(m), kind=K.CONV_TRANSPOSE, flops="conv_transpose",
                          dtype_rule=D.ALWAYS_FLOAT, accepts_int=False, same_dtype_required=True))

    # -- tensor manipulation ---------------------------------------------------------
    rows.append(_spec("Cat", "torch.cat", C.VARIADIC, AT_LEAST_2,
                      attrs=(AttrSpec("dim", "axis"),), kind=K.CAT, flops="zero"))
    rows.append(_spec("Stack", "torch.stack", C.VARIADIC, AT_LEAST_2, kind=K.STACK, flops="zero"))

    return rows


@dataclass(frozen=True)
class Catalog:
    """Immutable operator catalog, partitioned into compute and create sets."""

    compute_ops: tuple[OperatorSpec, ...]
    create_ops: tuple[OperatorSpec, ...]
    _by_name: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for spec in list(self.compute_ops) + list(self.create_ops):
            if spec.name in self._by_name:
                raise CatalogError(f"duplicate operator name: {spec.name}")
            self._by_name[spec.name] = spec

    def lookup(self, name: str) -> OperatorSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise NotFound(f"unknown operator: {name!r}") from None

    def compute_names(self) -> list[str]:
        return [s.name for s in self.compute_ops]

    def _resolve_subset(self, pool: Sequence[OperatorSpec], subset) -> list[OperatorSpec]:
        if subset is None:
            chosen = list(pool)
        else:
            names = list(subset)
            chosen = [self.lookup(n) for n in sorted(set(names))]
            allowed = {s.name for s in pool}
            chosen = [s for s in chosen if s.name in allowed]
        if not chosen:
            raise EmptySubset("operator subset is empty")
        return chosen

    def sample_compute(self, rng, subset=None) -> OperatorSpec:
        """Uniform draw over the compute set (or a named subset of it)."""
        return rng.choice(self._resolve_subset(self.compute_ops, subset))

    def sample_create(self, rng, subset=None) -> OperatorSpec:
        return rng.choice(self._resolve_subset(self.create_ops, subset))

    def to_json(self) -> str:
        docs = []
        for spec in list(self.create_ops) + list(self.compute_ops):
            docs.append({
                "name": spec.name,
                "qualified_name": spec.qualified_name,
                "category": spec.category.value,
                "arity": "at-least-2" if spec.is_variadic else spec.arity,
                "attr_schema": [{"name": a.name, "domain": a.domain} for a in spec.attr_schema],
                "flop_model": spec.flop_model,
            })
        return json.dumps(docs, indent=2, sort_keys=True)


def default_catalog() -> Catalog:
    rows = _build_table()
    return Catalog(
        compute_ops=tuple(r for r in rows if not r.is_create),
        create_ops=tuple(r for r in rows if r.is_create),
    )


def _numel(shape) -> int:
    n = 1
    for s in shape:
        n *= int(s)
    return n


def flops_of(spec: OperatorSpec, in_shapes, out_shape, attrs=None) -> int:
    """Operation count under the documented FLOP model table.

    Elementwise-like ops cost numel(out); reductions and cumulative ops cost
    numel(in); matmul/bmm cost 2*M*N*K times batch; convNd costs
    2*numel(out)*(C_in/g)*prod(k); transposed conv is the input-side analogue;
    pooling costs numel(out)*prod(k); pure data movement costs 0.
    """
    attrs = attrs or {}
    model = spec.flop_model
    if model == "zero":
        return 0
    if model == "numel_out":
        return _numel(out_shape)
    if model == "numel_in":
        if not in_shapes:
            raise ShapeMismatch(f"{spec.name}: no input shape given")
        return _numel(in_shapes[0])
    if model == "matmul":
        if len(in_shapes) != 2 or len(in_shapes[0]) < 2 or len(in_shapes[1]) < 2:
            raise ShapeMismatch(f"{spec.name}: expected two inputs of order >= 2")
        k = int(in_shapes[0][-1])
        if k != int(in_shapes[1][-2]):
            raise ShapeMismatch(f"{spec.name}: contraction dims differ")
        return 2 * _numel(out_shape) * k
    if model in ("conv", "conv_transpose"):
        m = spec.spatial_dims
        if len(in_shapes) != 2 or len(in_shapes[0]) != m + 2 or len(out_shape) != m + 2:
            raise ShapeMismatch(f"{spec.name}: expected order {m + 2} input/output")
        kprod = 1
        for j in range(m):
            kprod *= int(attrs[f"k{j + 1}"])
        g = int(attrs.get("groups", 1))
        if model == "conv":
            c_in = int(in_shapes[0][1])
            return 2 * _numel(out_shape) * (c_in // g) * kprod
        c_out = int(out_shape[1])
        return 2 * _numel(in_shapes[0]) * (c_out // g) * kprod
    if model == "pool":
        m = spec.spatial_dims
        if len(out_shape) != m + 2:
            raise ShapeMismatch(f"{spec.name}: expected order {m + 2} output")
        kprod = 1
        for j in range(m):
            kprod *= int(attrs[f"k{j + 1}"])
        return _numel(out_shape) * kprod
    raise ShapeMismatch(f"unknown flop model {model!r}")


def catalog_from_json(text: str) -> list[dict]:
    """Parse an exported catalog document back into row dictionaries."""
    return json.loads(text)

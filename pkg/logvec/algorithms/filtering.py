"""
Module: filtering.py

Role of this file
-----------------
Boolean filter expressions over label and numeric attributes, e.g.

    price < 100 and (color == "red" or not color != "blue")

Grammar (keywords are case-insensitive, `&&`, `||` and `!` also accepted):

    expr       := or_expr
    or_expr    := and_expr ("or" and_expr)*
    and_expr   := not_expr ("and" not_expr)*
    not_expr   := "not" not_expr | primary
    primary    := "(" expr ")" | comparison
    comparison := FIELD OP literal
    OP         := == | = | != | < | <= | > | >=
    literal    := number | 'string' | "string"

Label fields accept == and != against strings; numeric fields accept every
operator against numbers. The primary key may also be compared (integer or
string, by its type).

Who uses this file
------------------
- algorithms/segment_search.py: post-filter of segment results.
- nodes/proxy.py: verification before routing.
- storage/timetravel.py: filtered snapshot search.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from logvec.models.columns import SegmentColumns
from logvec.models.errors import FilterError
from logvec.models.schema import DataType, Entity, FieldRole, Schema

Literal = Union[int, float, str]

_OPS: Dict[str, Callable[[Any, Any], Any]] = {
    "==": operator.eq,
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
      | (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
      | (?P<op>==|!=|<=|>=|&&|\|\||<|>|=|!)
      | (?P<paren>[()])
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    field: str
    op: str
    value: Literal

    def fields(self) -> List[str]:
        return [self.field]


@dataclass(frozen=True)
class Not:
    child: "Node"

    def fields(self) -> List[str]:
        return self.child.fields()


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    children: Tuple["Node", ...]

    def fields(self) -> List[str]:
        return [f for c in self.children for f in c.fields()]


Node = Union[Comparison, Not, BoolOp]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _tokenize(text: str) -> List[Tuple[str, str]]:
    tokens: List[Tuple[str, str]] = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise FilterError(f"unexpected character at {pos} in filter {text!r}")
        kind = m.lastgroup or ""
        value = m.group(kind)
        if kind == "ident" and value.lower() in ("and", "or", "not"):
            kind, value = "op", value.lower()
        elif kind == "op" and value in ("&&", "||", "!"):
            value = {"&&": "and", "||": "or", "!": "not"}[value]
        tokens.append((kind, value))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def _peek(self) -> Optional[Tuple[str, str]]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _take(self) -> Tuple[str, str]:
        tok = self._peek()
        if tok is None:
            raise FilterError(f"unexpected end of filter {self.text!r}")
        self.pos += 1
        return tok

    def _accept(self, value: str) -> bool:
        tok = self._peek()
        if tok is not None and tok[0] in ("op", "paren") and tok[1] == value:
            self.pos += 1
            return True
        return False

    def parse(self) -> Node:
        if not self.tokens:
            raise FilterError("empty filter")
        node = self._or()
        if self._peek() is not None:
            raise FilterError(f"trailing input {self._peek()[1]!r} in filter {self.text!r}")
        return node

    def _or(self) -> Node:
        parts = [self._and()]
        while self._accept("or"):
            parts.append(self._and())
        return parts[0] if len(parts) == 1 else BoolOp("or", tuple(parts))

    def _and(self) -> Node:
        parts = [self._not()]
        while self._accept("and"):
            parts.append(self._not())
        return parts[0] if len(parts) == 1 else BoolOp("and", tuple(parts))

    def _not(self) -> Node:
        if self._accept("not"):
            return Not(self._not())
        return self._primary()

    def _primary(self) -> Node:
        if self._accept("("):
            node = self._or()
            if not self._accept(")"):
                raise FilterError(f"missing ')' in filter {self.text!r}")
            return node
        kind, name = self._take()
        if kind != "ident":
            raise FilterError(f"expected a field name, got {name!r}")
        kind, op = self._take()
        if kind != "op" or op not in _OPS:
            raise FilterError(f"expected a comparison after '{name}', got {op!r}")
        kind, raw = self._take()
        if kind == "num":
            value: Literal = float(raw) if any(c in raw for c in ".eE") else int(raw)
        elif kind == "str":
            value = re.sub(r"\\(.)", r"\1", raw[1:-1])
        else:
            raise FilterError(f"expected a literal after '{name} {op}', got {raw!r}")
        return Comparison(name, "==" if op == "=" else op, value)


# ---------------------------------------------------------------------------
# Public expression
# ---------------------------------------------------------------------------

class FilterExpr:
    def __init__(self, text: str, root: Node) -> None:
        self.text = text
        self.root = root

    def __repr__(self) -> str:
        return f"FilterExpr({self.text!r})"

    @property
    def fields(self) -> List[str]:
        return sorted(set(self.root.fields()))

    def check(self, schema: Schema) -> "FilterExpr":
        """Type-check every comparison against `schema`; raises FilterError."""
        self._check_node(self.root, schema)
        return self

    def _check_node(self, node: Node, schema: Schema) -> None:
        if isinstance(node, BoolOp):
            for c in node.children:
                self._check_node(c, schema)
            return
        if isinstance(node, Not):
            self._check_node(node.child, schema)
            return

        f = schema.get_field(node.field)
        if f is None:
            raise FilterError(f"unknown field '{node.field}' in filter")
        if f.role is FieldRole.VECTOR:
            raise FilterError(f"vector field '{node.field}' cannot be filtered")
        is_str = isinstance(node.value, str)
        if f.dtype is DataType.VARCHAR:
            if not is_str:
                raise FilterError(f"field '{node.field}' is a string, compared with {node.value!r}")
            if f.role is FieldRole.LABEL and node.op not in ("==", "!="):
                raise FilterError(f"label '{node.field}' supports only == and !=")
        else:
            if is_str:
                raise FilterError(f"field '{node.field}' is numeric, compared with {node.value!r}")
            if f.dtype is DataType.INT64 and f.role is FieldRole.PRIMARY_KEY and isinstance(node.value, float):
                raise FilterError(f"primary key '{node.field}' is an integer")

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def evaluate(self, columns: Union[SegmentColumns, Mapping[str, np.ndarray]], primary_key: str = "pk") -> np.ndarray:
        """Boolean mask, True where the row matches."""
        if isinstance(columns, SegmentColumns):
            data: Dict[str, Any] = dict(columns.filter_columns())
            data[primary_key] = np.asarray(columns.pks, dtype=object)
            n = len(columns)
        else:
            data = dict(columns)
            n = len(next(iter(data.values()))) if data else 0
        return self._eval(self.root, data, n)

    def _eval(self, node: Node, data: Mapping[str, Any], n: int) -> np.ndarray:
        if isinstance(node, BoolOp):
            masks = [self._eval(c, data, n) for c in node.children]
            combine = np.logical_and if node.op == "and" else np.logical_or
            out = masks[0]
            for m in masks[1:]:
                out = combine(out, m)
            return out
        if isinstance(node, Not):
            return ~self._eval(node.child, data, n)
        if node.field not in data:
            raise FilterError(f"unknown field '{node.field}' in filter")
        if n == 0:
            return np.zeros(0, dtype=bool)
        col = np.asarray(data[node.field])
        return np.asarray(_OPS[node.op](col, node.value), dtype=bool).reshape(n)

    def matches(self, entity: Entity, primary_key: str = "pk") -> bool:
        values: Dict[str, Any] = {k: np.asarray([v], dtype=object) for k, v in entity.labels.items()}
        values.update({k: np.asarray([v]) for k, v in entity.numerics.items()})
        values[primary_key] = np.asarray([entity.pk], dtype=object)
        return bool(self._eval(self.root, values, 1)[0])


def parse_filter(text: str) -> FilterExpr:
    if text is None or not str(text).strip():
        raise FilterError("empty filter")
    return FilterExpr(str(text), _Parser(str(text)).parse())


def compile_filter(text: Optional[str], schema: Schema) -> Optional[FilterExpr]:
    """parse_filter + check, None for an absent filter."""
    if text is None:
        return None
    return parse_filter(text).check(schema)

"""Restricted arithmetic/boolean expressions for config files.

Used for design-family constraints (``"R - r >= l/4"``) and for
design-dependent law coefficients (``"0.1 * R / 6"``).
"""

from __future__ import annotations

import ast
import math
import operator

from .core import ValidationError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos, ast.Not: operator.not_}
_CMP = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}
_FUNCS = {"sqrt": math.sqrt, "abs": abs, "min": min, "max": max, "exp": math.exp, "log": math.log}
_CONSTS = {"pi": math.pi, "true": True, "false": False, "True": True, "False": False}


def _eval(node, names):
    if isinstance(node, ast.Expression):
        return _eval(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, bool)):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in names:
            return names[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ValidationError(f"unknown name {node.id!r} in expression")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left, names), _eval(node.right, names))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval(node.operand, names))
    if isinstance(node, ast.BoolOp):
        values = [_eval(v, names) for v in node.values]
        return all(values) if isinstance(node.op, ast.And) else any(values)
    if isinstance(node, ast.Compare):
        left = _eval(node.left, names)
        for op, comp in zip(node.ops, node.comparators):
            if type(op) not in _CMP:
                raise ValidationError("unsupported comparison")
            right = _eval(comp, names)
            if not _CMP[type(op)](left, right):
                return False
            left = right
        return True
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        return _FUNCS[node.func.id](*[_eval(a, names) for a in node.args])
    raise ValidationError(f"unsupported expression element {type(node).__name__}")


def compile_expr(text: str):
    try:
        return ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse expression {text!r}: {exc.msg}") from None


def evaluate(text, names: dict):
    """Evaluate a config expression. Plain numbers pass through unchanged."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    return _eval(compile_expr(text), names)

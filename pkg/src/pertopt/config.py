"""Hierarchical component configs: registry, builds, YAML and instantiate.

A :class:`ConfigNode` names a registered component (``target``) and holds its
field values in declaration order. Values are scalars, lists, nested nodes or
the :data:`MISSING` sentinel, which renders as ``???``. YAML rendering is
pinned byte for byte so saved configs can be compared bitwise.
"""

from __future__ import annotations

import copy
import functools
import inspect
import math
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import yaml


class ConfigError(ValueError):
    pass


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "???"

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


@dataclass(eq=True)
class ConfigNode:
    target: str | None
    fields: dict[str, Any] = field(default_factory=dict)
    partial: bool = False

    def __getattr__(self, name):
        # only reached when normal lookup fails
        fields = self.__dict__.get("fields")
        if fields is not None and name in fields:
            return fields[name]
        raise AttributeError(name)

    def __getitem__(self, name):
        return self.fields[name]

    def get(self, name, default=None):
        return self.fields.get(name, default)


@dataclass
class Component:
    id: str
    constructor: Callable
    fields: dict[str, Any]


class Registry:
    """Component constructors and named config groups.

    Populate during setup; afterwards it is only read and can be shared
    across threads.
    """

    def __init__(self):
        self.components: dict[str, Component] = {}
        self.groups: dict[str, dict[str, ConfigNode]] = {}
        self._lock = threading.Lock()

    def register(self, component_id: str, constructor: Callable, fields: dict[str, Any] | None = None) -> Component:
        """Register ``constructor`` under ``component_id``.

        ``fields`` maps every configurable argument to its default, with
        :data:`MISSING` for mandatory ones. When omitted it is read from the
        constructor signature.
        """
        if fields is None:
            fields = _signature_fields(constructor)
        fields = {name: _normalize(value, f"{component_id}.{name}") for name, value in fields.items()}
        with self._lock:
            if component_id in self.components:
                raise ConfigError(f"component id {component_id!r} is already registered")
            entry = Component(component_id, constructor, fields)
            self.components[component_id] = entry
        return entry

    def register_group(self, group: str, name: str, node: ConfigNode) -> None:
        options = self.groups.setdefault(group, {})
        if name in options:
            raise ConfigError(f"group {group!r} already has an option named {name!r}")
        options[name] = copy.deepcopy(node)

    def lookup(self, component_id: str) -> Component:
        try:
            return self.components[component_id]
        except KeyError:
            raise ConfigError(f"unknown component {component_id!r}") from None

    def group_option(self, group: str, name: str) -> ConfigNode:
        if group not in self.groups:
            raise ConfigError(f"{group!r} is not a config group")
        options = self.groups[group]
        if name not in options:
            raise ConfigError(f"{group}={name}: unknown option; choose from {sorted(options)}")
        return copy.deepcopy(options[name])

    def builds(self, component_id: str, partial: bool = False, **overrides) -> ConfigNode:
        entry = self.lookup(component_id)
        unknown = [k for k in overrides if k not in entry.fields]
        if unknown:
            raise ConfigError(f"{component_id} has no field {unknown[0]!r}; valid fields: {list(entry.fields)}")
        values = copy.deepcopy(entry.fields)
        for k, v in overrides.items():
            values[k] = _normalize(v, f"{component_id}.{k}")
        return ConfigNode(component_id, values, partial)


def _signature_fields(fn: Callable) -> dict[str, Any]:
    out = {}
    for name, prm in inspect.signature(fn).parameters.items():
        if prm.kind in (prm.VAR_POSITIONAL, prm.VAR_KEYWORD):
            continue
        out[name] = MISSING if prm.default is prm.empty else prm.default
    return out


def _normalize(value, where: str):
    """Coerce to a config value (tuples become lists) or raise."""
    if value is MISSING or value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, ConfigNode):
        return copy.deepcopy(value)
    if isinstance(value, (list, tuple)):
        return [_normalize(v, f"{where}[{i}]") for i, v in enumerate(value)]
    raise ConfigError(f"{where}: {type(value).__name__} values cannot be stored in a config")


default_registry = Registry()


def register_component(component_id: str, constructor: Callable, fields: dict[str, Any] | None = None, registry: Registry | None = None) -> Component:
    return (registry or default_registry).register(component_id, constructor, fields)


def builds(component_id: str, partial: bool = False, registry: Registry | None = None, **overrides) -> ConfigNode:
    """Config for a registered component: registry defaults, then ``overrides``."""
    return (registry or default_registry).builds(component_id, partial=partial, **overrides)


def make_config(**fields) -> ConfigNode:
    """A target-less node grouping sub-configs (an experiment's root)."""
    return ConfigNode(None, {k: _normalize(v, k) for k, v in fields.items()})


# -- YAML rendering ----------------------------------------------------------

_PLAIN = re.compile(r"^[A-Za-z_/][A-Za-z0-9_./=+\-]*$")


def _render_float(x: float) -> str:
    if math.isnan(x):
        return ".nan"
    if math.isinf(x):
        return ".inf" if x > 0 else "-.inf"
    text = repr(x)
    if "e" in text:
        mantissa, exponent = text.split("e")
        if "." not in mantissa:
            mantissa += ".0"
        if exponent[0] not in "+-":
            exponent = "+" + exponent
        text = f"{mantissa}e{exponent}"
    return text


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r", "\0": "\\0"}


def _yaml_char(ch: str) -> str:
    if ch in _ESCAPES:
        return _ESCAPES[ch]
    o = ord(ch)
    # printable ASCII and the non-ASCII ranges YAML accepts verbatim, minus line separators and the BOM
    if 0x20 <= o <= 0x7E or (0xA0 <= o <= 0xD7FF and o not in (0x2028, 0x2029)) or (0xE000 <= o <= 0xFFFD and o != 0xFEFF) or o > 0xFFFF:
        return ch
    return f"\\x{o:02X}" if o <= 0xFF else f"\\u{o:04X}"


def _render_str(s: str) -> str:
    if _PLAIN.match(s) and yaml.safe_load(s) == s:
        return s
    return '"' + "".join(_yaml_char(ch) for ch in s) + '"'


def _render_scalar(v) -> str:
    if v is MISSING:
        return "???"
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _render_float(v)
    if isinstance(v, str):
        return _render_str(v)
    raise ConfigError(f"cannot render {type(v).__name__} value {v!r}")


def _node_lines(node: ConfigNode) -> list[str]:
    lines = []
    if node.target is not None:
        lines.append(f"_target_: {_render_str(node.target)}")
    if node.partial:
        lines.append("_partial_: true")
    for key, value in node.fields.items():
        lines.extend(_entry_lines(key, value))
    return lines


def _entry_lines(key: str, value) -> list[str]:
    if isinstance(value, ConfigNode):
        body = _node_lines(value)
        if not body:
            return [f"{key}: {{}}"]
        return [f"{key}:"] + ["  " + ln for ln in body]
    if isinstance(value, list):
        if not value:
            return [f"{key}: []"]
        return [f"{key}:"] + _seq_lines(value)
    return [f"{key}: {_render_scalar(value)}"]


def _seq_lines(items: list) -> list[str]:
    lines = []
    for item in items:
        if isinstance(item, ConfigNode):
            body = _node_lines(item) or ["{}"]
        elif isinstance(item, list):
            body = _seq_lines(item) if item else ["[]"]
        else:
            body = [_render_scalar(item)]
        lines.append("- " + body[0])
        lines.extend("  " + ln for ln in body[1:])
    return lines


def to_yaml(node) -> str:
    """Deterministic YAML for a node (or a plain list of scalars)."""
    if isinstance(node, list):
        lines = _seq_lines(node) if node else ["[]"]
    else:
        lines = _node_lines(node)
        if not lines:
            lines = ["{}"]
    return "\n".join(lines) + "\n"


# -- YAML parsing ------------------------------------------------------------


def from_yaml(text: str, registry: Registry | None = None) -> ConfigNode:
    """Parse text produced by :func:`to_yaml` back into a node.

    Plain ``???`` scalars become :data:`MISSING`. Targets must be registered
    and every field must belong to its component.
    """
    registry = registry or default_registry
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else "?"
        raise ConfigError(f"malformed config at line {line}: {exc.problem}") from None
    finally:
        loader.dispose()
    if root is None:
        raise ConfigError("empty config text")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"line {root.start_mark.line + 1}: config root must be a mapping")
    return _from_node(root, loader, registry)


def _line(n) -> int:
    return n.start_mark.line + 1


def _from_node(n, loader, registry: Registry):
    if isinstance(n, yaml.MappingNode):
        items = []
        for k, v in n.value:
            if not isinstance(k, yaml.ScalarNode):
                raise ConfigError(f"line {_line(k)}: mapping keys must be plain strings")
            items.append((k.value, v))
        keys = [k for k, _ in items]
        if len(set(keys)) != len(keys):
            raise ConfigError(f"line {_line(n)}: duplicate key")
        target, partial, fields = None, False, {}
        for key, v in items:
            if key == "_target_":
                target = loader.construct_object(v)
                if not isinstance(target, str):
                    raise ConfigError(f"line {_line(v)}: _target_ must be a string")
            elif key == "_partial_":
                partial = loader.construct_object(v)
                if not isinstance(partial, bool):
                    raise ConfigError(f"line {_line(v)}: _partial_ must be true or false")
            else:
                fields[key] = _from_node(v, loader, registry)
        if target is not None:
            try:
                entry = registry.lookup(target)
            except ConfigError as exc:
                raise ConfigError(f"line {_line(n)}: {exc}") from None
            for key in fields:
                if key not in entry.fields:
                    raise ConfigError(f"line {_line(n)}: {target} has no field {key!r}; valid fields: {list(entry.fields)}")
        return ConfigNode(target, fields, partial)
    if isinstance(n, yaml.SequenceNode):
        return [_from_node(v, loader, registry) for v in n.value]
    if n.style is None and n.value == "???":
        return MISSING
    try:
        value = loader.construct_object(n)
    except yaml.constructor.ConstructorError as exc:
        raise ConfigError(f"line {_line(n)}: {exc.problem}") from None
    if not (value is None or isinstance(value, (bool, int, float, str))):
        raise ConfigError(f"line {_line(n)}: unsupported scalar {n.value!r}")
    return value


# -- instantiate -------------------------------------------------------------


class MissingValueError(ConfigError):
    pass


def type_checked(component: functools.partial, *args, **kwargs):
    """Build ``component`` after checking its configured values against the
    constructor's annotations.

    Registered as a wrapper so a config alone can switch the checks on, e.g.
    ``builds("pertopt.type_checked", component=builds(X, partial=True))``.
    Only plain ``int``/``float``/``bool``/``str`` annotations are checked.
    """
    fn = component.func
    hints = getattr(fn, "__annotations__", {}) or {}
    if inspect.isclass(fn):
        hints = getattr(fn.__init__, "__annotations__", {}) or {}
    simple = {"int": int, "float": (int, float), "bool": bool, "str": str, int: int, float: (int, float), bool: bool, str: str}
    for name, value in component.keywords.items():
        expected = simple.get(hints.get(name))
        if expected is None:
            continue
        if isinstance(value, bool) and expected is not bool:
            raise TypeError(f"{fn.__name__}.{name}: expected {hints[name]}, got bool {value!r}")
        if not isinstance(value, expected):
            raise TypeError(f"{fn.__name__}.{name}: expected {hints[name]}, got {type(value).__name__} {value!r}")
    return component(*args, **kwargs)


def instantiate(node, *args, registry: Registry | None = None, **kwargs):
    """Build the object a config describes.

    Nested nodes are built first, depth first. A partial node yields a
    ``functools.partial`` awaiting the fields that are still MISSING (and any
    extra arguments). ``kwargs`` fill or replace top-level fields. Target-less
    nodes come back as a ``dict`` of built fields.
    """
    registry = registry or default_registry
    return _instantiate(node, args, kwargs, registry, path="")


def _instantiate(node, args, kwargs, registry, path):
    if isinstance(node, list):
        return [_instantiate(v, (), {}, registry, f"{path}[{i}]") for i, v in enumerate(node)]
    if not isinstance(node, ConfigNode):
        return node
    values = dict(node.fields)
    values.update(kwargs)
    built = {}
    for key, value in values.items():
        sub = f"{path}.{key}" if path else key
        if value is MISSING:
            if node.partial:
                continue
            raise MissingValueError(f"missing mandatory value for {sub!r}")
        if key in kwargs:
            built[key] = value
        else:
            built[key] = _instantiate(value, (), {}, registry, sub)
    if node.target is None:
        return built
    entry = registry.lookup(node.target)
    if node.partial:
        return functools.partial(entry.constructor, *args, **built)
    return entry.constructor(*args, **built)


# -- overrides ----------------------------------------------------------------


@dataclass(frozen=True)
class OverrideSpec:
    path: tuple[str, ...]
    values: tuple
    group: bool = False

    @property
    def key(self) -> str:
        return ".".join(self.path)

    def token(self, value) -> str:
        return f"{self.key}={_format_value(value)}"


_TOKEN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)=(.*)$", re.S)
_INT = re.compile(r"^[-+]?\d+$")
_FLOAT = re.compile(r"^[-+]?(\d+\.?\d*([eE][-+]?\d+)?|\.\d+([eE][-+]?\d+)?|inf|nan)$", re.I)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str) and (v != v.strip() or "," in v or _parse_literal(v) != v):
        return "'" + v.replace("'", "\\'") + "'"
    return str(v)


def _parse_literal(text: str):
    if text in ("true", "True"):
        return True
    if text in ("false", "False"):
        return False
    if text in ("null", "None"):
        return None
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    return text


def _split_values(raw: str, token: str) -> list:
    values, buf, quote, quoted = [], [], None, False
    i = 0
    while i < len(raw):
        ch = raw[i]
        if quote:
            if ch == "\\" and i + 1 < len(raw):
                buf.append(raw[i + 1])
                i += 2
                continue
            if ch == quote:
                quote = None
            else:
                buf.append(ch)
        elif ch in "'\"":
            if buf:
                raise ConfigError(f"cannot parse override {token!r}: stray quote")
            quote, quoted = ch, True
        elif ch == ",":
            values.append(("".join(buf), quoted))
            buf, quoted = [], False
        else:
            if quoted:
                raise ConfigError(f"cannot parse override {token!r}: text after closing quote")
            buf.append(ch)
        i += 1
    if quote:
        raise ConfigError(f"cannot parse override {token!r}: unterminated quote")
    values.append(("".join(buf), quoted))
    out = []
    for text, was_quoted in values:
        if was_quoted:
            out.append(text)
            continue
        text = text.strip()
        if not text:
            raise ConfigError(f"cannot parse override {token!r}: empty value")
        out.append(_parse_literal(text))
    return out


def parse_overrides(tokens, registry: Registry | None = None) -> list[OverrideSpec]:
    """Parse ``path=value(,value)*`` tokens.

    Values are read literally: integers, floats, ``true``/``false``,
    ``null``, otherwise strings (quote them to keep commas or force a string).
    A path naming a registered group becomes a group spec.
    """
    registry = registry or default_registry
    specs, seen = [], set()
    for token in tokens:
        m = _TOKEN.match(token.strip())
        if not m:
            raise ConfigError(f"cannot parse override {token!r}; expected path=value[,value...]")
        path = tuple(m.group(1).split("."))
        if path in seen:
            raise ConfigError(f"override {token!r} repeats path {m.group(1)!r}")
        seen.add(path)
        values = tuple(_split_values(m.group(2), token))
        specs.append(OverrideSpec(path, values, group=m.group(1) in registry.groups))
    return specs


def apply_override(root: ConfigNode, path, value, registry: Registry | None = None) -> ConfigNode:
    """Return a copy of ``root`` with one existing path set (or group option selected)."""
    registry = registry or default_registry
    path = tuple(path.split(".")) if isinstance(path, str) else tuple(path)
    dotted = ".".join(path)
    out = copy.deepcopy(root)
    parent = out
    for i, key in enumerate(path[:-1]):
        child = parent.fields.get(key) if isinstance(parent, ConfigNode) else None
        if not isinstance(child, ConfigNode):
            raise ConfigError(f"override {dotted}: no config node at {'.'.join(path[: i + 1])!r}")
        parent = child
    leaf = path[-1]
    if leaf not in parent.fields:
        raise ConfigError(f"override {dotted}: unknown field {leaf!r}; valid fields: {list(parent.fields)}")
    if dotted in registry.groups:
        if not isinstance(value, str):
            raise ConfigError(f"override {dotted}={value!r}: group option must be a name")
        parent.fields[leaf] = registry.group_option(dotted, value)
        return out
    if isinstance(parent.fields[leaf], ConfigNode):
        raise ConfigError(f"override {dotted}={value!r}: {dotted!r} is a nested config, not a value")
    parent.fields[leaf] = _normalize(value, dotted)
    return out

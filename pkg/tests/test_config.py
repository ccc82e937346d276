import functools
import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from pertopt.config import (
    MISSING,
    ConfigError,
    ConfigNode,
    MissingValueError,
    Registry,
    apply_override,
    builds,
    from_yaml,
    instantiate,
    make_config,
    parse_overrides,
    to_yaml,
    type_checked,
)
from pertopt.optim import Adam

ADAM_DEFAULTS = {"params": MISSING, "lr": 0.001, "betas": [0.9, 0.999], "eps": 1e-08, "weight_decay": 0, "amsgrad": False}


class Record:
    """Constructor that just remembers its arguments."""

    def __init__(self, *args, **kwargs):
        self.args, self.kwargs = args, kwargs

    def __eq__(self, other):
        return isinstance(other, Record) and (self.args, self.kwargs) == (other.args, other.kwargs)


class Layer:
    built = []

    def __init__(self, width: int, scale: float = 1.0):
        self.width, self.scale = width, scale
        Layer.built.append("layer")


class Net:
    def __init__(self, layer, name: str = "net"):
        Layer.built.append("net")
        self.layer, self.name = layer, name


@pytest.fixture
def reg():
    r = Registry()
    r.register("Adam", Adam, ADAM_DEFAULTS)
    r.register("Layer", Layer)
    r.register("Net", Net)
    r.register("Record", Record, {"a": 1, "b": MISSING})
    r.register("type_checked", type_checked, {"component": MISSING})
    r.register_group("layer", "small", r.builds("Layer", width=2))
    r.register_group("layer", "big", r.builds("Layer", width=64))
    return r


class TestRegistry:
    def test_defaults_flow_into_builds(self, reg):
        assert reg.builds("Adam").fields["lr"] == 0.001
        assert reg.builds("Adam").fields["weight_decay"] == 0

    def test_no_default_becomes_missing(self, reg):
        assert reg.builds("Layer").fields == {"width": MISSING, "scale": 1.0}

    def test_duplicate_id(self, reg):
        with pytest.raises(ConfigError, match="already registered"):
            reg.register("Adam", Adam)

    def test_unregistered_id(self, reg):
        with pytest.raises(ConfigError, match="Nope"):
            reg.builds("Nope")

    def test_unstorable_default(self):
        with pytest.raises(ConfigError):
            Registry().register("x", Record, {"a": object()})


class TestBuilds:
    def test_override_one_field(self, reg):
        node = reg.builds("Adam", lr=0.1)
        assert node.fields["lr"] == 0.1
        assert {k: v for k, v in node.fields.items() if k != "lr"} == {k: v for k, v in ADAM_DEFAULTS.items() if k != "lr"}

    def test_unknown_field_names_valid_choices(self, reg):
        with pytest.raises(ConfigError, match=r"typo_field.*params.*amsgrad"):
            reg.builds("Adam", typo_field=1)

    def test_yaml_lists_defaults(self, reg):
        text = to_yaml(reg.builds("Adam"))
        assert "lr: 0.001\n" in text and "weight_decay: 0\n" in text

    def test_default_registry_module_helper(self):
        node = builds("pertopt.optim.Adam")
        assert node.target == "pertopt.optim.Adam" and node.fields["params"] is MISSING


class TestYaml:
    def test_adam_block_exact(self, reg):
        assert to_yaml(reg.builds("Adam")) == (
            "_target_: Adam\n"
            "params: ???\n"
            "lr: 0.001\n"
            "betas:\n"
            "- 0.9\n"
            "- 0.999\n"
            "eps: 1.0e-08\n"
            "weight_decay: 0\n"
            "amsgrad: false\n"
        )

    def test_empty_node(self, reg):
        r = Registry()
        r.register("Empty", Record, {})
        assert to_yaml(r.builds("Empty")) == "_target_: Empty\n"

    def test_nested_and_partial(self, reg):
        node = make_config(net=reg.builds("Net", layer=reg.builds("Layer", partial=True, width=3)), seed=0)
        assert to_yaml(node) == "net:\n  _target_: Net\n  layer:\n    _target_: Layer\n    _partial_: true\n    width: 3\n    scale: 1.0\n  name: net\nseed: 0\n"

    @pytest.mark.parametrize(
        "value,text",
        [(1e-08, "1.0e-08"), (1e20, "1.0e+20"), (1.5e-300, "1.5e-300"), (0.1, "0.1"), (-0.0, "-0.0"), (math.inf, ".inf"), (True, "true"), (None, "null")],
    )
    def test_scalar_rendering(self, value, text):
        r = Registry()
        r.register("R", Record, {"a": value})
        assert to_yaml(r.builds("R")) == f"_target_: R\na: {text}\n"

    @pytest.mark.parametrize("s", ["???", "true", "1.0", "null", "a: b", "", " pad", "x,y", "#c", "line\nbreak", "ünï", "\x7f", "tab\there", "\u2028", "\ufeff", "\U0001F600", 'q"uo\\te'])
    def test_ambiguous_strings_stay_strings(self, s):
        r = Registry()
        r.register("R", Record, {"a": s})
        assert from_yaml(to_yaml(r.builds("R")), r).fields["a"] == s

    def test_missing_parses_to_sentinel(self, reg):
        node = from_yaml("_target_: Adam\nparams: ???\n", reg)
        assert node.fields["params"] is MISSING

    def test_scientific_notation_exact(self, reg):
        assert from_yaml("_target_: Adam\neps: 1.0e-08\n", reg).fields["eps"] == 1e-08

    def test_round_trip(self, reg):
        node = reg.builds("Adam")
        assert from_yaml(to_yaml(node), reg) == node
        assert to_yaml(from_yaml(to_yaml(node), reg)) == to_yaml(node)

    def test_malformed_reports_line(self, reg):
        with pytest.raises(ConfigError, match="line 2"):
            from_yaml("seed: 0\n  bad: indent\nz: 1\n", reg)

    def test_unknown_target(self, reg):
        with pytest.raises(ConfigError, match="line 3.*Nope"):
            from_yaml("seed: 0\nopt:\n  _target_: Nope\n", reg)

    def test_unknown_field_in_text(self, reg):
        with pytest.raises(ConfigError, match="lrr"):
            from_yaml("_target_: Adam\nlrr: 0.1\n", reg)


class TestInstantiate:
    def test_partial_optimizer_gets_params(self, reg):
        import numpy as np

        from pertopt.autodiff import Tensor

        params = [Tensor(np.zeros(2), requires_grad=True)]
        factory = instantiate(reg.builds("Adam", partial=True, lr=0.01), registry=reg)
        assert isinstance(factory, functools.partial)
        opt = factory(params)
        direct = Adam(params, lr=0.01)
        assert vars(opt).keys() == vars(direct).keys()
        assert (opt.lr, opt.betas, opt.eps, opt.weight_decay, opt.amsgrad) == (direct.lr, direct.betas, direct.eps, direct.weight_decay, direct.amsgrad)

    def test_missing_names_path(self, reg):
        with pytest.raises(MissingValueError, match="params"):
            instantiate(reg.builds("Adam"), registry=reg)
        with pytest.raises(MissingValueError, match="net.layer.width"):
            instantiate(make_config(net=reg.builds("Net", layer=reg.builds("Layer"))), registry=reg)

    def test_kwargs_supply_missing(self, reg):
        assert instantiate(reg.builds("Record"), registry=reg, b=2) == Record(a=1, b=2)

    def test_nested_built_depth_first(self, reg):
        Layer.built = []
        net = instantiate(reg.builds("Net", layer=reg.builds("Layer", width=4)), registry=reg)
        assert Layer.built == ["layer", "net"]
        assert isinstance(net.layer, Layer) and net.layer.width == 4

    def test_target_less_node_gives_dict(self, reg):
        out = instantiate(make_config(x=1, rec=reg.builds("Record", b=[1, 2])), registry=reg)
        assert out == {"x": 1, "rec": Record(a=1, b=[1, 2])}

    def test_type_checked_wrapper(self, reg):
        ok = reg.builds("type_checked", component=reg.builds("Layer", partial=True, width=3))
        assert instantiate(ok, registry=reg).width == 3
        bad = reg.builds("type_checked", component=reg.builds("Layer", partial=True, width="3"))
        with pytest.raises(TypeError, match="width"):
            instantiate(bad, registry=reg)
        with pytest.raises(TypeError):
            instantiate(reg.builds("type_checked", component=reg.builds("Layer", partial=True, width=True)), registry=reg)


class TestOverrides:
    def test_sweep_token(self, reg):
        (spec,) = parse_overrides(["optim.epsilon=0.0,0.25,0.5,1.0,2.0"], reg)
        assert spec.path == ("optim", "epsilon") and spec.values == (0.0, 0.25, 0.5, 1.0, 2.0)
        assert all(isinstance(v, float) for v in spec.values)

    def test_group_token(self, reg):
        (spec,) = parse_overrides(["layer=small,big"], reg)
        assert spec.group and spec.values == ("small", "big")

    @pytest.mark.parametrize(
        "token,value",
        [("a.b=true", True), ("a=False", False), ("a=null", None), ("a=3", 3), ("a=-2e-3", -0.002), ("a=abc", "abc"), ("a='1,2'", "1,2"), ('a="true"', "true")],
    )
    def test_literals(self, token, value):
        (spec,) = parse_overrides([token], Registry())
        assert spec.values == (value,) and type(spec.values[0]) is type(value)

    @pytest.mark.parametrize("token", ["noequals", "=1", "a..b=1", "a=", "a=1,,2", "a='open"])
    def test_bad_tokens_are_quoted(self, token):
        with pytest.raises(ConfigError) as info:
            parse_overrides([token], Registry())
        assert repr(token) in str(info.value) or token in str(info.value)

    def test_repeated_path(self):
        with pytest.raises(ConfigError):
            parse_overrides(["a=1", "a=2"], Registry())

    def test_apply_never_creates_fields(self, reg):
        root = make_config(net=reg.builds("Net", layer=reg.builds("Layer", width=1)), seed=0)
        with pytest.raises(ConfigError, match="valid fields"):
            apply_override(root, "net.layer.depth", 3, reg)
        with pytest.raises(ConfigError):
            apply_override(root, "net.nothing.width", 3, reg)
        with pytest.raises(ConfigError):
            apply_override(root, "net.layer", 3, reg)
        out = apply_override(root, "net.layer.width", 3, reg)
        assert out.net.layer.width == 3 and root.net.layer.width == 1

    def test_group_selects_registered_option(self, reg):
        root = make_config(layer=reg.group_option("layer", "small"))
        assert apply_override(root, "layer", "big", reg).layer.width == 64
        with pytest.raises(ConfigError, match="choose from"):
            apply_override(root, "layer", "huge", reg)


# -- properties over randomized registries -----------------------------------

identifiers = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)
scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(-(2**63), 2**63),
    st.floats(allow_nan=False),
    st.text(st.characters(blacklist_categories=("Cs",)), max_size=12),
    st.just(MISSING),
)
values = st.recursive(scalars, lambda inner: st.lists(inner, max_size=3), max_leaves=6)
field_maps = st.dictionaries(identifiers, values, max_size=5)


@st.composite
def registries_and_nodes(draw):
    reg = Registry()
    ids = draw(st.lists(st.from_regex(r"[a-z]+(\.[A-Za-z_]+){0,2}", fullmatch=True), min_size=1, max_size=4, unique=True))
    for cid in ids:
        reg.register(cid, Record, draw(field_maps))

    def node(depth):
        cid = draw(st.sampled_from(ids))
        fields = reg.lookup(cid).fields
        chosen = draw(st.lists(st.sampled_from(sorted(fields)), unique=True)) if fields else []
        overrides = {}
        for k in chosen:
            overrides[k] = node(depth + 1) if depth < 2 and draw(st.booleans()) else draw(values)
        return reg.builds(cid, partial=draw(st.booleans()), **overrides)

    root = make_config(**{k: node(0) for k in draw(st.lists(identifiers, min_size=1, max_size=3, unique=True))})
    return reg, root


@given(registries_and_nodes())
def test_yaml_round_trip_is_bitwise(pair):
    reg, root = pair
    text = to_yaml(root)
    again = from_yaml(text, reg)
    assert to_yaml(again) == text
    assert again == root


@given(st.data())
def test_builds_then_instantiate_equals_direct(data):
    reg = Registry()
    defaults = data.draw(st.dictionaries(identifiers, values.filter(lambda v: v is not MISSING), max_size=5))
    reg.register("rec", Record, defaults)
    names = data.draw(st.lists(st.sampled_from(sorted(defaults)), unique=True)) if defaults else []
    assignment = {k: data.draw(values.filter(lambda v: v is not MISSING)) for k in names}
    assume(all(not isinstance(v, list) or MISSING not in v for v in assignment.values()))
    built = instantiate(reg.builds("rec", **assignment), registry=reg)
    expected = {k: [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, list) else v for k, v in {**defaults, **assignment}.items()}
    assert built == Record(**expected)


@given(registries_and_nodes(), st.data())
def test_override_soundness(pair, data):
    reg, root = pair
    paths = []

    def walk(node, prefix):
        for k, v in node.fields.items():
            paths.append(prefix + (k,))
            if isinstance(v, ConfigNode):
                walk(v, prefix + (k,))

    walk(root, ())
    path = data.draw(st.sampled_from(paths))
    try:
        out = apply_override(root, path, 7, reg)
    except ConfigError:
        return

    def shape(node):
        return {k: shape(v) if isinstance(v, ConfigNode) else None for k, v in node.fields.items()}

    assert shape(out) == shape(root)

"""Parser, static checks, substitution and expression evaluation."""

import pytest

from qbisim.calculus import (
    NIL,
    Apply,
    Binary,
    Call,
    Channel,
    CIn,
    COut,
    Fun,
    If,
    Lit,
    Meas,
    Par,
    PChoice,
    Prefix,
    QIn,
    QOut,
    Relabel,
    Restrict,
    Sum,
    Tau,
    Var,
    alpha_canonical,
    eval_expr,
    fv,
    has_quantum_input,
    module_json,
    parse_module,
    parse_term,
    pretty,
    pretty_definition,
    qv,
    subst_qubits,
    subst_values,
    term_json,
    values_equal,
)
from qbisim.errors import EvaluationError, ParseError, WellFormednessError
from qbisim.quantum import BitString


class TestParsing:
    def test_nil(self):
        assert parse_term("nil") is NIL

    def test_prefix_chain(self):
        t = parse_term("tau . a!0 . nil")
        assert isinstance(t, Prefix) and isinstance(t.action, Tau)
        inner = t.cont
        assert isinstance(inner.action, COut)
        assert inner.action.chan == Channel("a")
        assert inner.cont is NIL

    def test_sum_parallel_precedence(self):
        t = parse_term("a!0 . nil || b!0 . nil + c!0 . nil")
        assert isinstance(t, Sum) and len(t.parts) == 2
        assert isinstance(t.parts[0], Par)

    def test_prefix_binds_tighter_than_parallel(self):
        t = parse_term("a!0 . nil || b!1 . nil")
        assert isinstance(t, Par)
        assert all(isinstance(p, Prefix) for p in t.parts)

    def test_parens_override(self):
        t = parse_term("a!0 . (b!1 . nil || c!2 . nil)")
        assert isinstance(t, Prefix) and isinstance(t.cont, Par)

    def test_restriction(self):
        t = parse_term("(a!0 . nil || a?x . nil) \\ {a, #c}")
        assert isinstance(t, Restrict)
        assert t.channels == frozenset({Channel("a"), Channel("c", quantum=True)})

    def test_relabelling(self):
        t = parse_term("a!0 . nil [a -> b, #c -> #d]")
        assert isinstance(t, Relabel)
        assert t.rename(Channel("a")) == Channel("b")
        assert t.rename(Channel("c", quantum=True)) == Channel("d", quantum=True)
        assert t.rename(Channel("z")) == Channel("z")

    def test_relabelling_kind_mismatch(self):
        with pytest.raises((WellFormednessError, ParseError)):
            parse_term("a!0 . nil [a -> #b]")

    def test_quantum_prefixes(self):
        t = parse_term("#c?q . #d!q . nil")
        assert isinstance(t.action, QIn)
        assert isinstance(t.cont.action, QOut)

    def test_apply_and_meas(self):
        t = parse_term("apply H[q1] . meas Mcomp[q1; x] . c!x . nil")
        assert isinstance(t.action, Apply) and t.action.qubits == ("q1",)
        m = t.cont.action
        assert isinstance(m, Meas) and m.op == "Mcomp"

    def test_pchoice(self):
        t = parse_term("pchoice { 1/2 -> a!0 . nil ; 1/2 -> a!1 . nil }")
        assert isinstance(t, PChoice)
        assert [p for p, _ in t.branches] == [0.5, 0.5]

    def test_pchoice_weights_must_sum_to_one(self):
        with pytest.raises(ParseError):
            parse_term("pchoice { 1/2 -> nil ; 1/3 -> nil }")

    def test_if_then(self):
        t = parse_term("if x = 0 then a!0 . nil")
        assert isinstance(t, If)
        assert isinstance(t.cond, Binary) and t.cond.op == "="

    def test_if_else_desugars_to_guarded_sum(self):
        t = parse_term("if x = 0 then a!0 . nil else a!1 . nil")
        assert isinstance(t, Sum) and len(t.parts) == 2
        pos, neg = t.parts
        assert isinstance(pos, If) and isinstance(neg, If)
        assert neg.cond.op == "not"

    def test_call_with_arguments(self):
        t = parse_term('A("01", 1; q1, q2)')
        assert isinstance(t, Call)
        assert t.cargs[0].value == BitString("01")
        assert t.qargs == ("q1", "q2")

    def test_bare_call(self):
        t = parse_term("Main")
        assert isinstance(t, Call) and t.cargs == () and t.qargs == ()

    def test_bitstring_literals(self):
        t = parse_term('c!"" . nil')
        assert t.action.expr.value == BitString("")
        with pytest.raises(ParseError):
            parse_term('c!"012" . nil')

    def test_comments_and_whitespace(self):
        t = parse_term("a!0 .  // send a zero\n   nil")
        assert isinstance(t, Prefix)

    def test_unicode_arrow_accepted(self):
        t = parse_term("a!0 . nil [a → b]")
        assert isinstance(t, Relabel)

    def test_parse_errors_carry_position(self):
        with pytest.raises(ParseError) as err:
            parse_term("a!0 .\n . nil")
        assert err.value.line == 2

    def test_number_before_dot_prefix(self):
        # the lexer must not absorb ".n" of ".nil" into the number
        t = parse_term("c!1 . nil")
        assert t.action.expr.value == 1.0


class TestAlphaCanonical:
    def test_equivalent_terms_parse_equal(self):
        a = parse_term("c?x . d!x . nil")
        b = parse_term("c?y . d!y . nil")
        assert a == b

    def test_binders_renamed_positionally(self):
        t = parse_term("c?x . meas M[q; y] . d!y . nil")
        assert t.action.var == "x$0"
        assert t.cont.action.var == "x$1"

    def test_quantum_binder_renamed(self):
        t = parse_term("#c?q . apply H[q] . nil")
        assert t.action.qvar == "q$0"
        assert t.cont.action.qubits == ("q$0",)

    def test_free_names_untouched(self):
        t = parse_term("apply H[q1] . c!z . nil")
        assert t.action.qubits == ("q1",)
        assert t.cont.action.expr == Var("z")

    def test_shadowing(self):
        t = parse_term("c?x . c?x . d!x . nil")
        inner = t.cont
        assert t.action.var == "x$0"
        assert inner.action.var == "x$1"
        assert inner.cont.action.expr == Var("x$1")

    def test_idempotent(self):
        t = parse_term("c?x . (d!x . nil || #e?q . apply H[q] . nil)")
        assert alpha_canonical(t) == t


ROUND_TRIP_TERMS = [
    "nil",
    "tau . nil",
    "a!0 . nil + a!1 . nil",
    "(a!0 . nil || a?x . b!x . nil) \\ {a}",
    "a!0 . nil [a -> b] \\ {b}",
    "#c?q . apply H[q] . #c!q . nil",
    "meas Mcomp[q1; x] . if x = 0 then out!0 . nil else out!1 . nil",
    "pchoice { 1/4 -> a!0 . nil ; 3/4 -> tau . nil }",
    'A("0101", 1/2 + 1; q1, q2) || B',
    "if length(k) = 2 then c!substr(k, m) . nil",
    "c!cmp(k, a, b) . nil",
    "if not (x = 0) and y < 3 then tau . nil",
]


@pytest.mark.parametrize("source", ROUND_TRIP_TERMS)
def test_pretty_round_trip(source):
    t = parse_term(source)
    assert parse_term(pretty(t)) == t


class TestFreeVariables:
    def test_qv_output_adds(self):
        assert qv(parse_term("#c!q . nil")) == {"q"}

    def test_qv_input_binds(self):
        assert qv(parse_term("#c?q . apply H[q] . nil")) == frozenset()

    def test_qv_operations(self):
        t = parse_term("apply CNOT[q1, q2] . meas M[q3; x] . nil")
        assert qv(t) == {"q1", "q2", "q3"}

    def test_qv_call(self):
        assert qv(parse_term("A(1; q1, q2)")) == {"q1", "q2"}

    def test_qv_par_union(self):
        t = parse_term("apply H[q1] . nil || apply H[q2] . nil")
        assert qv(t) == {"q1", "q2"}

    def test_fv_binders(self):
        t = parse_term("c?x . d!x . e!y . nil")
        assert fv(t) == {"y"}

    def test_fv_meas_binds(self):
        t = parse_term("meas M[q; x] . c!x . nil")
        assert fv(t) == frozenset()

    def test_fv_if(self):
        t = parse_term("if x = 0 then c!y . nil")
        assert fv(t) == {"x", "y"}

    def test_has_quantum_input(self):
        assert has_quantum_input(parse_term("tau . #c?q . nil"))
        assert not has_quantum_input(parse_term("#c!q . nil"))


class TestWellFormedness:
    def test_send_then_use_rejected(self):
        with pytest.raises(WellFormednessError):
            parse_module("A(; q) := #c!q . apply H[q] . nil")

    def test_send_then_drop_accepted(self):
        parse_module("A(; q) := #c!q . nil")

    def test_parallel_sharing_rejected(self):
        with pytest.raises(WellFormednessError):
            parse_module("A(; q) := apply H[q] . nil || meas M[q; x] . nil")

    def test_parallel_disjoint_accepted(self):
        parse_module("A(; q, r) := apply H[q] . nil || apply H[r] . nil")

    def test_sum_may_share(self):
        parse_module("A(; q) := apply H[q] . nil + meas M[q; x] . nil")

    def test_repeated_quantum_argument(self):
        with pytest.raises(WellFormednessError):
            parse_module("A(; q) := nil\nB(; q, r) := A(; q) || apply CNOT[q, q] . nil")

    def test_undeclared_qubit_in_body(self):
        with pytest.raises(WellFormednessError):
            parse_module("A(; q) := apply H[r] . nil")

    def test_unbound_variable_in_body(self):
        with pytest.raises(WellFormednessError):
            parse_module("A(x;) := c!y . nil")

    def test_undefined_call(self):
        with pytest.raises(WellFormednessError):
            parse_module("A := B")

    def test_call_arity_mismatch(self):
        with pytest.raises(WellFormednessError):
            parse_module("A(x;) := nil\nB := A(1, 2;)")

    def test_duplicate_definition(self):
        with pytest.raises(WellFormednessError):
            parse_module("A := nil\nA := tau . nil")

    def test_recursive_definition_allowed(self):
        mod = parse_module("A(; q) := apply H[q] . A(; q)")
        assert "A" in mod.definitions


class TestModuleDeclarations:
    def test_channel_domains(self):
        mod = parse_module('channels { c : {0, 1}; k : {"00", "01", "10", "11"}; d : real }\nA := c!0 . nil')
        assert mod.channel_domains["c"] == (0.0, 1.0)
        assert mod.channel_domains["k"] == tuple(map(BitString, ["00", "01", "10", "11"]))
        assert mod.channel_domains["d"] is None

    def test_registry_source(self):
        mod = parse_module('registry "ops.json"\nA := nil')
        assert mod.registry_sources == ("ops.json",)

    def test_duplicate_channel(self):
        with pytest.raises(ParseError):
            parse_module("channels { c : {0}; c : {1} }")

    def test_definition_params(self):
        mod = parse_module("A(x, y; q) := if x = y then apply H[q] . nil")
        d = mod.definitions["A"]
        assert d.cparams == ("x", "y") and d.qparams == ("q",)
        assert "A(x, y; q) :=" in pretty_definition(d)


class TestSubstitution:
    def test_values_into_outputs(self):
        t = parse_term("c!x . d!y . nil")
        s = subst_values(t, {"x": 1.0})
        assert s.action.expr == Lit(1.0)
        assert s.cont.action.expr == Var("y")

    def test_binder_shadows_value(self):
        t = parse_term("c?x . d!x . nil")
        canonical_var = t.action.var
        s = subst_values(t, {canonical_var: 7.0})
        assert s.cont.action.expr == Var(canonical_var)

    def test_values_into_guards_and_calls(self):
        t = parse_term("if x = 0 then A(x; q)")
        s = subst_values(t, {"x": 0.0})
        assert eval_expr(s.cond) is True
        assert s.body.cargs[0] == Lit(0.0)

    def test_qubit_renaming(self):
        t = parse_term("apply H[q] . meas M[q; x] . #c!q . nil")
        s = subst_qubits(t, {"q": "q7"})
        assert s.action.qubits == ("q7",)
        assert s.cont.action.qubits == ("q7",)
        assert s.cont.cont.action.qvar == "q7"

    def test_qubit_renaming_shadowed_by_input(self):
        t = parse_term("#c?q . apply H[q] . nil")
        bound = t.action.qvar
        s = subst_qubits(t, {bound: "q9"})
        assert s.cont.action.qubits == (bound,)

    def test_call_qargs_renamed(self):
        t = parse_term("A(; q, r)")
        s = subst_qubits(t, {"q": "a", "r": "b"})
        assert s.qargs == ("a", "b")


class TestEvaluation:
    def test_arithmetic(self):
        assert eval_expr(parse_term("c!(1 + 2 * 3) . nil").action.expr) == 7.0

    def test_division_by_zero(self):
        with pytest.raises(EvaluationError):
            eval_expr(parse_term("c!(1 / 0) . nil").action.expr)

    def test_comparisons(self):
        e = parse_term("if 1 < 2 then nil").cond
        assert eval_expr(e) is True

    def test_equality_tolerance(self):
        assert values_equal(0.1 + 0.2, 0.3)
        assert not values_equal(0.1, 0.2)

    def test_mixed_kind_equality_is_false(self):
        assert not values_equal(BitString("0"), 0.0)
        e = parse_term('if x = "01" then nil').cond
        assert eval_expr(e, {"x": 5.0}) is False

    def test_bitstring_equality_exact(self):
        assert values_equal(BitString("01"), BitString("01"))
        assert not values_equal(BitString("01"), BitString("010"))

    def test_cmp(self):
        e = parse_term("c!cmp(k, a, b) . nil").action.expr
        env = {"k": BitString("1011"), "a": BitString("0011"), "b": BitString("0101")}
        assert eval_expr(e, env) == BitString("11")

    def test_cmp_length_mismatch(self):
        e = parse_term("c!cmp(k, a, b) . nil").action.expr
        env = {"k": BitString("10"), "a": BitString("001"), "b": BitString("01")}
        with pytest.raises(EvaluationError):
            eval_expr(e, env)

    def test_substr_remstr(self):
        sub = parse_term("c!substr(k, m) . nil").action.expr
        rem = parse_term("c!remstr(k, m) . nil").action.expr
        env = {"k": BitString("abcd".replace("a", "1").replace("b", "0").replace("c", "1").replace("d", "0")),
               "m": BitString("0110")}
        assert eval_expr(sub, env) == BitString("01")
        assert eval_expr(rem, env) == BitString("10")

    def test_concat_length(self):
        env = {"a": BitString("01"), "b": BitString("1")}
        assert eval_expr(parse_term("c!concat(a, b) . nil").action.expr, env) == BitString("011")
        assert eval_expr(parse_term("c!length(a) . nil").action.expr, env) == 2.0

    def test_boolean_short_circuit(self):
        e = parse_term('if x = 1 or 1 / 0 > 0 then nil').cond
        # 'or' must not evaluate the right side once the left is true
        assert eval_expr(e, {"x": 1.0}) is True

    def test_unbound_variable(self):
        with pytest.raises(EvaluationError):
            eval_expr(Var("nope"))

    def test_type_errors(self):
        with pytest.raises(EvaluationError):
            eval_expr(parse_term('c!(1 + concat("0", "1")) . nil').action.expr)
        with pytest.raises(EvaluationError):
            eval_expr(parse_term('if "01" < "10" then nil').cond)


class TestJsonExport:
    def test_term_shape(self):
        d = term_json(parse_term("apply H[q] . c!0 . nil"))
        assert d["node"] == "prefix"
        assert d["action"] == {"kind": "apply", "op": "H", "qubits": ["q"]}
        assert d["cont"]["action"]["kind"] == "output"

    def test_module_shape(self):
        mod = parse_module('channels { c : {0, 1} }\nA(; q) := meas Mcomp[q; x] . c!x . nil')
        d = module_json(mod)
        assert d["channels"] == {"c": ["0", "1"]}
        assert d["definitions"]["A"]["qparams"] == ["q"]
        assert d["definitions"]["A"]["body"]["action"]["kind"] == "meas"

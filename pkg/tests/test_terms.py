"""Term parsing, canonicalization, enumeration, plans, and evaluation."""

import math
from itertools import product
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

import pdeid.autodiff as ad
from pdeid.errors import ConfigError, FormatError
from pdeid.network import NetworkArchitecture, init_network
from pdeid.terms import (
    IDENTITY_OP,
    DerivativeOp,
    Library,
    LibraryTerm,
    build_derivative_nodes,
    build_eval_plan,
    build_term_node,
    enumerate_terms,
    evaluate_terms,
    load_library,
    parse_term,
    save_library,
)

CONFIG_DIR = Path(__file__).parents[1] / "configs"

U = IDENTITY_OP
DT = DerivativeOp((1,))
DX = DerivativeOp((0, 1))
DX2 = DerivativeOp((0, 2))
DX3 = DerivativeOp((0, 3))


class TestDerivativeOp:
    def test_trailing_zeros_trimmed(self):
        assert DerivativeOp((0, 1, 0, 0)) == DX
        assert DerivativeOp((0, 0, 0)) == U
        assert U.total_order == 0

    def test_render(self):
        assert U.render() == "U"
        assert DX2.render() == "D_x^2 U"
        assert DerivativeOp((1, 2)).render() == "D_t D_x^2 U"
        assert DerivativeOp((0, 0, 3)).render() == "D_y^3 U"

    def test_negative_order_rejected(self):
        with pytest.raises(ConfigError):
            DerivativeOp((0, -1))

    def test_too_many_dimensions_rejected(self):
        with pytest.raises(ConfigError):
            DerivativeOp((1, 1, 1, 1, 1))

    def test_decremented(self):
        assert DX2.decremented(1) == DX
        assert DerivativeOp((1, 1)).decremented(1) == DT
        with pytest.raises(ValueError):
            DT.decremented(1)


class TestParse:
    def test_plain_u(self):
        term = parse_term("U")
        assert term.factors == ((U, 1),)
        assert term.degree == 1

    def test_square_times_u(self):
        term = parse_term("(D_x U)^2 * U")
        assert term.factors == ((DX, 2), (U, 1))
        assert term.degree == 3

    def test_commutativity(self):
        assert parse_term("D_x^2 U * U") == parse_term("U * D_x^2 U")

    def test_juxtaposition(self):
        assert parse_term("(D_x U)(U)") == parse_term("D_x U * U")
        assert parse_term("(D_t U)(D_y U)(U)") == parse_term(
            "U * D_t U * D_y U")

    def test_chained_prefixes_are_one_operator(self):
        term = parse_term("D_t D_x^2 U")
        assert term.factors == ((DerivativeOp((1, 2)), 1),)

    def test_repeated_prefix_accumulates(self):
        assert parse_term("D_x D_x U") == parse_term("D_x^2 U")

    def test_compound_power_distributes(self):
        assert parse_term("((D_x U)^2 U)^2") == parse_term(
            "(D_x U)^4 * (U)^2")

    def test_duplicate_ops_merge(self):
        term = parse_term("U * U * U")
        assert term.factors == ((U, 3),)

    def test_whitespace_insensitive(self):
        assert parse_term("  ( D_x U ) ^ 2*U ") == parse_term("(D_x U)^2*U")

    @pytest.mark.parametrize("text", [
        "D_w U", "U^0", "(U", "U)", "", "   ", "D_x", "2U", "U # U",
        "()", "D_x ^ U", "U ** U",
    ])
    def test_malformed_rejected(self, text):
        with pytest.raises(FormatError):
            parse_term(text)

    def test_error_reports_position(self):
        with pytest.raises(FormatError, match="column 5"):
            parse_term("U*D_w U")


class TestRender:
    def test_round_trip_examples(self):
        for text in ["U", "D_x^3 U", "(D_x U)^2*U", "D_t D_x U*(U)^4",
                     "(D_t U)(D_y U)(U)", "D_y^3 U"]:
            term = parse_term(text)
            assert parse_term(term.render()) == term

    def test_descending_factor_order(self):
        term = parse_term("U*(D_x^2 U)*(D_x U)")
        assert term.render() == "D_x^2 U*D_x U*U"

    def test_render_grouped(self):
        assert parse_term("D_x^2 U").render_grouped() == "(D_x^2 U)"
        assert parse_term("D_x U*U").render_grouped() == "(D_x U)(U)"
        assert parse_term("(U)^3 * D_x U").render_grouped() == "(D_x U)(U)^3"
        for text in ["(D_x U)^2(U)^2", "(D_t U)(D_y U)(U)"]:
            term = parse_term(text)
            assert parse_term(term.render_grouped()) == term


@st.composite
def random_terms(draw):
    n_factors = draw(st.integers(1, 4))
    factors = []
    for _ in range(n_factors):
        orders = draw(st.lists(st.integers(0, 3), min_size=1, max_size=3))
        factors.append((DerivativeOp(tuple(orders)),
                        draw(st.integers(1, 3))))
    return LibraryTerm(factors)


class TestCanonicalization:
    @given(random_terms(), st.randoms(use_true_random=False))
    def test_factor_permutation_parses_identically(self, term, rng):
        parts = term.render().split("*")
        rng.shuffle(parts)
        assert parse_term("*".join(parts)) == term

    @given(random_terms())
    def test_grouped_and_starred_agree(self, term):
        assert parse_term(term.render_grouped()) == term


class TestEnumerate:
    def test_small_case_exact(self):
        got = enumerate_terms({U, DX}, 2)
        expected = ["U", "D_x U", "U*U", "D_x U*U", "(D_x U)^2"]
        assert [t.render() for t in got] == [
            parse_term(e).render() for e in expected]

    def test_burgers_closure_count(self):
        got = enumerate_terms({U, DX, DX2, DX3}, 4)
        assert len(got) == 69
        assert len(set(got)) == 69

    def test_burgers_closure_matches_brute_force(self):
        derivs = [U, DX, DX2, DX3]
        brute = set()
        for degree in range(1, 5):
            for combo in product(derivs, repeat=degree):
                brute.add(LibraryTerm([(op, 1) for op in combo]))
        assert set(enumerate_terms(derivs, 4)) == brute

    @pytest.mark.parametrize("n_derivs,max_degree",
                             [(1, 1), (2, 3), (3, 2), (4, 4), (5, 4)])
    def test_count_is_multichoose_sum(self, n_derivs, max_degree):
        derivs = [DerivativeOp((0, k)) for k in range(n_derivs)]
        got = enumerate_terms(derivs, max_degree)
        want = sum(math.comb(n_derivs + j - 1, j)
                   for j in range(1, max_degree + 1))
        assert len(got) == want
        assert len(set(got)) == want

    def test_contains_all_burgers_terms(self):
        lib = load_library(CONFIG_DIR / "burgers17.toml")
        enumerated = set(enumerate_terms({U, DX, DX2, DX3}, 4))
        for term in lib.rhs:
            assert term in enumerated

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(ConfigError):
            enumerate_terms({U}, 0)
        with pytest.raises(ConfigError):
            enumerate_terms(set(), 2)


class TestLibrary:
    def test_shipped_burgers_library(self):
        lib = load_library(CONFIG_DIR / "burgers17.toml")
        assert lib.lhs == parse_term("D_t U")
        assert lib.n_rhs == 17
        assert lib.n_d == 1
        assert lib.max_order == 3
        assert lib.rhs[5] == parse_term("(D_x U)(U)")

    def test_shipped_wave_library(self):
        lib = load_library(CONFIG_DIR / "wave23.toml")
        assert lib.lhs == parse_term("D_x^2 U")
        assert lib.n_rhs == 23
        assert lib.n_d == 2
        assert parse_term("(D_t U)(D_y U)(U)") in lib.rhs

    def test_shipped_ks_library(self):
        lib = load_library(CONFIG_DIR / "ks18.toml")
        assert lib.n_rhs == 18
        assert lib.max_order == 4
        assert parse_term("D_x^4 U") in lib.rhs

    def test_duplicate_rhs_rejected(self):
        with pytest.raises(ConfigError):
            Library(parse_term("D_t U"), [parse_term("U"), parse_term("U")])

    def test_lhs_on_rhs_rejected(self):
        with pytest.raises(ConfigError):
            Library(parse_term("U"), [parse_term("U")])

    def test_declared_max_order_too_small_rejected(self):
        with pytest.raises(ConfigError):
            Library(parse_term("D_t U"), [parse_term("D_x^2 U")], max_order=1)

    def test_declared_n_d_too_small_rejected(self):
        with pytest.raises(ConfigError):
            Library(parse_term("D_t U"), [parse_term("D_y U")], n_d=1)


class TestEvalPlan:
    def test_burgers_plan(self):
        lib = load_library(CONFIG_DIR / "burgers17.toml")
        plan = build_eval_plan(lib)
        assert [s.op for s in plan] == [U, DX, DT, DX2, DX3]
        assert plan[0].predecessor is None
        assert plan[3].predecessor == DX and plan[3].coord == 1
        assert plan[4].predecessor == DX2

    def test_identity_only_plan(self):
        lib = Library(parse_term("D_t U"), [parse_term("U"),
                                            parse_term("(U)^2")])
        plan = build_eval_plan(lib)
        assert [s.op for s in plan] == [U, DT]

    def test_wave_plan_covers_closure(self):
        lib = load_library(CONFIG_DIR / "wave23.toml")
        plan = build_eval_plan(lib)
        ops = [s.op for s in plan]
        assert set(ops) == {
            U, DT, DerivativeOp((2,)), DerivativeOp((3,)),
            DX, DX2,
            DerivativeOp((0, 0, 1)), DerivativeOp((0, 0, 2)),
            DerivativeOp((0, 0, 3)),
        }
        by_op = {s.op: s for s in plan}
        assert by_op[DX2].predecessor == DX
        assert by_op[DX].predecessor == U

    def test_plan_is_ordered_and_chained(self):
        lib = load_library(CONFIG_DIR / "wave23.toml")
        plan = build_eval_plan(lib)
        seen = set()
        last_order = -1
        for step in plan:
            assert step.op.total_order >= last_order
            last_order = step.op.total_order
            if step.predecessor is None:
                assert step.op == U
            else:
                assert step.predecessor in seen
                assert step.predecessor.total_order == step.op.total_order - 1
                assert step.predecessor == step.op.decremented(step.coord)
            seen.add(step.op)
        assert len(seen) == len(plan)

    def test_plan_minimality(self):
        for name in ["burgers17.toml", "wave23.toml", "ks18.toml"]:
            lib = load_library(CONFIG_DIR / name)
            plan = build_eval_plan(lib)
            needed = lib.all_ops()
            chained = {s.predecessor for s in plan if s.predecessor is not None}
            for step in plan:
                assert step.op in needed or step.op in chained


class _LinearSurrogate:
    """U(t, x) = 2x, exactly."""

    class arch:
        n_inputs = 2

    def forward(self, coords):
        return ad.affine([coords[1]], [ad.const(2.0)], ad.const(0.0))


class TestEvaluateTerms:
    def test_plain_u_equals_forward(self, rng):
        arch = NetworkArchitecture(n_inputs=2, hidden=(10, 10))
        net = init_network(arch, seed=5)
        lib = Library(parse_term("D_t U"), [parse_term("U")])
        plan = build_eval_plan(lib)
        points = rng.uniform(-1.0, 1.0, size=(7, 2))
        _, f1 = evaluate_terms(net, points, plan, lib)
        np.testing.assert_array_equal(f1.val, net.predict(points))

    def test_linear_surrogate_value(self, rng):
        net = _LinearSurrogate()
        lib = Library(parse_term("D_t U"), [parse_term("(D_x U)^2 * U")])
        plan = build_eval_plan(lib)
        points = rng.uniform(-3.0, 3.0, size=(9, 2))
        _, f1 = evaluate_terms(net, points, plan, lib)
        np.testing.assert_allclose(f1.val, 8.0 * points[:, 1], rtol=1e-14)

    def test_all_burgers_terms_match_unshared_recomputation(self, rng):
        lib = load_library(CONFIG_DIR / "burgers17.toml")
        plan = build_eval_plan(lib)
        arch = NetworkArchitecture(n_inputs=2, hidden=(8, 8))
        net = init_network(arch, seed=11)
        points = rng.uniform(-1.0, 1.0, size=(5, 2))
        shared = evaluate_terms(net, points, plan, lib)
        for term, node in zip((lib.lhs, *lib.rhs), shared):
            coords = [ad.leaf("t"), ad.leaf("x")]
            out = net.forward(coords)
            fresh = None
            for op, power in term.factors:
                d = out
                for idx, order in enumerate(op.orders):
                    for _ in range(order):
                        d = ad.differentiate(d, coords[idx])
                factor = ad.intpow(d, power)
                fresh = factor if fresh is None else ad.mul(fresh, factor)
            for dim, c in enumerate(coords):
                c.set_value(points[:, dim])
            np.testing.assert_allclose(node.val, ad.evaluate(fresh),
                                       rtol=1e-12)

    def test_dimension_mismatch_rejected(self, rng):
        arch = NetworkArchitecture(n_inputs=3, hidden=(6,))
        net = init_network(arch, seed=2)
        lib = Library(parse_term("D_t U"), [parse_term("U")])
        plan = build_eval_plan(lib)
        with pytest.raises(ConfigError):
            evaluate_terms(net, rng.uniform(size=(4, 2)), plan, lib)

    def test_plan_missing_coordinate_rejected(self):
        lib = load_library(CONFIG_DIR / "wave23.toml")
        plan = build_eval_plan(lib)
        out = ad.leaf("u")
        coords = [ad.leaf("t"), ad.leaf("x")]
        with pytest.raises(ConfigError):
            build_derivative_nodes(out, coords, plan)

    def test_term_node_uses_shared_derivatives(self):
        x = ad.leaf("x")
        u = ad.mul(x, x)
        lib = Library(parse_term("D_t U"), [parse_term("(D_x U)^2")])
        nodes = build_derivative_nodes(u, [ad.leaf("t"), x],
                                       build_eval_plan(lib))
        term = build_term_node(lib.rhs[0], nodes)
        x.set_value(3.0)
        assert ad.evaluate(term) == 36.0


class TestLibraryFile:
    def test_save_load_round_trip(self, tmp_path):
        lib = load_library(CONFIG_DIR / "wave23.toml")
        out = tmp_path / "copy.toml"
        save_library(lib, out)
        back = load_library(out)
        assert back.lhs == lib.lhs
        assert back.rhs == lib.rhs
        assert back.name == lib.name
        assert back.max_degree == lib.max_degree

    def test_missing_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('lhs = "D_t U"\n')
        with pytest.raises(FormatError, match="rhs"):
            load_library(path)

    def test_invalid_toml_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('lhs = "D_t U\nrhs = [')
        with pytest.raises(FormatError):
            load_library(path)

    def test_bad_term_inside_file_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('lhs = "D_t U"\nrhs = ["D_q U"]\n')
        with pytest.raises(FormatError):
            load_library(path)

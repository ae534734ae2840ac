import json

import numpy as np
import pytest
from conftest import instance_kappa, make_bounded_lp

from ermipm import (
    BlockLayout,
    ErmInstance,
    InstanceFormatError,
    InstanceValidationError,
    IpmConfig,
    LossTerm,
    PrimalErmSpec,
    ball,
    dualize,
    epigraph_square,
    load_instance,
    load_primal_spec,
    nonneg_orthant,
    save_instance,
    save_primal_spec,
    solve,
)


def square_spec(rng, k=5, d=2):
    terms = [
        LossTerm("square", rng.standard_normal((1, d)), rng.standard_normal(1))
        for _ in range(k)
    ]
    return PrimalErmSpec(tuple(terms))


class TestPrimalSpec:
    def test_square_terms_validate(self, rng):
        spec = square_spec(rng)
        assert spec.d == 2
        assert all(t.arity == 1 for t in spec.losses)

    def test_rejects_structural_problems(self, rng):
        with pytest.raises(InstanceValidationError, match="no loss terms"):
            PrimalErmSpec(())
        good = LossTerm("square", np.ones((1, 2)), np.zeros(1))
        with pytest.raises(InstanceValidationError, match="must be \\(n_i, 2\\)"):
            PrimalErmSpec((good, LossTerm("square", np.ones((1, 3)), np.zeros(1))))
        with pytest.raises(InstanceValidationError, match="square loss is scalar"):
            PrimalErmSpec((LossTerm("square", np.ones((2, 2)), np.zeros(2)),))
        with pytest.raises(InstanceValidationError, match="without a conjugate"):
            PrimalErmSpec((LossTerm("custom", np.ones((1, 2)), np.zeros(1)),))
        with pytest.raises(InstanceValidationError, match="unknown loss kind"):
            PrimalErmSpec((LossTerm("huber", np.ones((1, 2)), np.zeros(1)),))

    def test_custom_needs_matching_dim(self):
        bar = ball(2.0, 3)  # wrong: needs arity+1 = 2
        with pytest.raises(InstanceValidationError, match="dim 3 != arity\\+1"):
            PrimalErmSpec((LossTerm("custom", np.ones((1, 2)), np.zeros(1), bar),))


class TestValidate:
    def test_accepts_good_instance(self):
        make_bounded_lp(m=6, d=2, seed=0).validate()

    def test_error_messages_name_the_failure(self, rng):
        inst = make_bounded_lp(m=6, d=2, seed=1)
        A_bad = inst.A.copy()
        A_bad[2, 1] = np.nan
        with pytest.raises(InstanceValidationError, match=r"A\[2,1\]"):
            ErmInstance(
                A_bad, inst.b, inst.c, inst.layout, inst.barriers, inst.kappa
            ).validate()
        with pytest.raises(InstanceValidationError, match="exceeds kappa"):
            ErmInstance(
                inst.A * 100, inst.b, inst.c, inst.layout, inst.barriers, inst.kappa
            ).validate()
        with pytest.raises(InstanceValidationError, match="smallest eigenvalue"):
            # entries clear kappa = 1 but the Gram spectrum does not reach 1/kappa
            ErmInstance(
                inst.A * 0.05, inst.b, inst.c, inst.layout, inst.barriers, 1.0
            ).validate()
        with pytest.raises(InstanceValidationError, match="barrier dim"):
            bad_bars = list(inst.barriers)
            bad_bars[0] = nonneg_orthant(2)
            ErmInstance(
                inst.A, inst.b, inst.c, inst.layout, bad_bars, inst.kappa
            ).validate()
        with pytest.raises(InstanceValidationError, match="not strictly interior"):
            ErmInstance(
                inst.A, inst.b, inst.c, inst.layout, inst.barriers, inst.kappa,
                anchors=-np.ones(inst.n),
            ).validate()

    def test_block_dim_cap(self, rng):
        A = rng.standard_normal((5, 2))
        layout = BlockLayout((5,))
        with pytest.raises(InstanceValidationError, match="exceeds the cap"):
            ErmInstance(
                A, np.zeros(2), np.zeros(5), layout, [nonneg_orthant(5)],
                instance_kappa(A),
            ).validate()


class TestDualize:
    def test_shape_posts(self, rng):
        spec = square_spec(rng, k=5, d=2)
        inst = dualize(spec)
        assert inst.n == sum(t.arity + 1 for t in spec.losses)  # one lift each
        assert inst.d == 2
        assert np.array_equal(inst.b, np.zeros(2))
        assert inst.layout.m == 5
        for i, term in enumerate(spec.losses):
            sl = inst.layout.block_slice(i)
            assert np.allclose(inst.c[sl], np.append(term.shift, 1.0))
            assert np.allclose(inst.A[sl][: term.arity], term.A_i)
            assert np.allclose(inst.A[sl][term.arity], 0.0)  # lifted row
            assert inst.barriers[i].kind == "epigraph-square"
            assert inst.barriers[i].params["coeff"] == 0.25
        assert inst.anchors is not None
        assert np.allclose(inst.A.T @ inst.anchors, inst.b)  # feasible start free

    def test_rank_deficient_losses_rejected(self):
        terms = (
            LossTerm("square", np.array([[1.0, 0.0]]), np.zeros(1)),
            LossTerm("square", np.array([[2.0, 0.0]]), np.zeros(1)),
        )
        with pytest.raises(InstanceValidationError, match="rank-deficient"):
            dualize(PrimalErmSpec(terms))

    def test_strong_duality_against_least_squares(self, rng):
        # square losses: the primal optimum is plain least squares, and the
        # dualized instance's optimum is its negative
        spec = square_spec(rng, k=6, d=2)
        Arows = np.vstack([t.A_i for t in spec.losses])
        shifts = np.concatenate([t.shift for t in spec.losses])
        y_star, *_ = np.linalg.lstsq(Arows, shifts, rcond=None)
        p_star = float(np.sum((Arows @ y_star - shifts) ** 2))
        inst = dualize(spec)
        rep = solve(inst, 0.25, IpmConfig.aggressive(mode="exact-oracle"))
        assert rep.converged
        assert abs(-rep.objective - p_star) <= rep.gap_bound + 1e-9


class TestSerialization:
    def test_instance_roundtrip_inline(self, tmp_path, rng):
        inst = make_bounded_lp(m=7, d=3, seed=2, kind="mixed")
        inst.meta["label"] = "fixture"
        p = save_instance(inst, tmp_path / "inst.json")
        back = load_instance(p)
        assert np.array_equal(back.A, inst.A)
        assert np.array_equal(back.b, inst.b)
        assert np.array_equal(back.c, inst.c)
        assert back.layout.sizes == inst.layout.sizes
        assert [b.kind for b in back.barriers] == [b.kind for b in inst.barriers]
        assert back.kappa == inst.kappa
        assert back.meta["label"] == "fixture"

    def test_instance_roundtrip_sidecar(self, tmp_path):
        inst = make_bounded_lp(m=7, d=3, seed=3)
        p = save_instance(inst, tmp_path / "side.json", sidecar=True)
        assert (tmp_path / "side.bin").exists()
        doc = json.loads(p.read_text())
        assert doc["A"] == {"sidecar": "side.bin", "shape": [inst.n, inst.d]}
        back = load_instance(p)
        assert np.array_equal(back.A, inst.A)  # float64-LE roundtrip is exact

    def test_sidecar_size_mismatch(self, tmp_path):
        inst = make_bounded_lp(m=7, d=3, seed=4)
        p = save_instance(inst, tmp_path / "bad.json", sidecar=True)
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 8)
        with pytest.raises(InstanceFormatError, match="/A/sidecar"):
            load_instance(p)

    def test_format_errors_carry_pointers(self, tmp_path):
        f = tmp_path / "x.json"
        f.write_text("{nope")
        with pytest.raises(InstanceFormatError, match="not valid JSON"):
            load_instance(f)
        f.write_text(json.dumps({"meta": {"format": "other"}}))
        with pytest.raises(InstanceFormatError, match="/meta/format"):
            load_instance(f)
        inst = make_bounded_lp(m=6, d=2, seed=5)
        p = save_instance(inst, tmp_path / "y.json")
        doc = json.loads(p.read_text())
        del doc["kappa"]
        p.write_text(json.dumps(doc))
        with pytest.raises(InstanceFormatError, match="/kappa: missing"):
            load_instance(p)
        doc = json.loads(save_instance(inst, tmp_path / "z.json").read_text())
        doc["blocks"][1]["coords"] = [5, 6]  # hole in the tiling
        (tmp_path / "z.json").write_text(json.dumps(doc))
        with pytest.raises(InstanceFormatError, match="/blocks/1/coords"):
            load_instance(tmp_path / "z.json")

    def test_loaded_instances_are_validated(self, tmp_path):
        inst = make_bounded_lp(m=6, d=2, seed=6)
        p = save_instance(inst, tmp_path / "w.json")
        doc = json.loads(p.read_text())
        doc["kappa"] = 1e-9  # structurally fine, semantically invalid
        p.write_text(json.dumps(doc))
        with pytest.raises(InstanceValidationError):
            load_instance(p)

    def test_primal_spec_roundtrip(self, tmp_path, rng):
        spec = PrimalErmSpec(
            (
                LossTerm("square", rng.standard_normal((1, 2)), rng.standard_normal(1)),
                LossTerm(
                    "custom",
                    rng.standard_normal((1, 2)),
                    rng.standard_normal(1),
                    epigraph_square(0.5),
                ),
            )
        )
        p = save_primal_spec(spec, tmp_path / "spec.json")
        back = load_primal_spec(p)
        assert len(back.losses) == 2
        assert back.losses[0].kind == "square"
        assert np.array_equal(back.losses[1].A_i, spec.losses[1].A_i)
        assert back.losses[1].conjugate_barrier.params["coeff"] == 0.5
        with pytest.raises(InstanceFormatError, match="/losses"):
            load_primal_spec(save_path_with(tmp_path, {"meta": {"format": "ermipm-primal"}}))


def save_path_with(tmp_path, doc):
    p = tmp_path / "frag.json"
    p.write_text(json.dumps(doc))
    return p

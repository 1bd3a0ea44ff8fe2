"""Tests for the lattice loss family against enumeration and FD oracles."""

import math

import numpy as np
import pytest

import ftsim.lattice as lat


BLANK = 0


def make_lattice(logits, targets, blank_id=BLANK):
    return lat.LogitLattice(
        raw_logits=np.asarray(logits, dtype=np.float64),
        targets=np.asarray(targets, dtype=np.int64),
        blank_id=blank_id,
    )


def uniform_lattice(T, U, V):
    targets = np.arange(1, U + 1) % (V - 1) + 1 if U else np.zeros(0, dtype=np.int64)
    targets = np.clip(targets, 1, V - 1)
    return make_lattice(np.zeros((T, U + 1, V)), targets)


def random_lattice(rng, T, U, V, scale=2.0):
    targets = rng.integers(1, V, size=U)
    return make_lattice(rng.normal(size=(T, U + 1, V)) * scale, targets)


def fd_grad(loss_fn, lattice, step=1e-5):
    z = lattice.raw_logits
    grad = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp = z.copy()
        zp[idx] += step
        zm = z.copy()
        zm[idx] -= step
        lp = loss_fn(make_lattice(zp, lattice.targets, lattice.blank_id))
        lm = loss_fn(make_lattice(zm, lattice.targets, lattice.blank_id))
        grad[idx] = (lp - lm) / (2 * step)
    return grad


class TestNormalize:
    def test_symmetric_two_way(self):
        lattice = make_lattice(np.zeros((1, 1, 2)), [])
        out = lat.normalize(lattice)
        np.testing.assert_allclose(out.raw_logits[0, 0], np.log([0.5, 0.5]))

    def test_symmetric_three_way(self):
        lattice = make_lattice(np.ones((1, 1, 3)), [])
        out = lat.normalize(lattice)
        np.testing.assert_allclose(out.raw_logits[0, 0], np.log([1 / 3] * 3))

    def test_sigmoid_cell(self):
        lattice = make_lattice(np.array([[[2.0, 0.0]]]), [])
        out = lat.normalize(lattice)
        sigma = 1.0 / (1.0 + math.exp(-2.0))
        np.testing.assert_allclose(
            out.raw_logits[0, 0], [math.log(sigma), math.log(1 - sigma)], atol=1e-14
        )

    def test_cells_sum_to_one(self):
        rng = np.random.default_rng(0)
        lattice = random_lattice(rng, 3, 2, 5)
        out = lat.normalize(lattice)
        sums = np.exp(out.raw_logits).sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        lattice = random_lattice(rng, 2, 1, 3)
        once = lat.normalize(lattice)
        twice = lat.normalize(once)
        np.testing.assert_allclose(once.raw_logits, twice.raw_logits, atol=1e-14)

    def test_rejects_non_finite(self):
        z = np.zeros((1, 1, 2))
        z[0, 0, 0] = np.inf
        with pytest.raises(lat.LatticeError):
            make_lattice(z, [])


class TestLatticeValidation:
    def test_rejects_blank_target(self):
        with pytest.raises(lat.LatticeError):
            make_lattice(np.zeros((2, 2, 3)), [BLANK])

    def test_rejects_bad_blank_id(self):
        with pytest.raises(lat.LatticeError):
            make_lattice(np.zeros((2, 1, 3)), [], blank_id=3)

    def test_rejects_target_length_mismatch(self):
        with pytest.raises(lat.LatticeError):
            make_lattice(np.zeros((2, 2, 3)), [1, 2])


class TestForwardBackward:
    def test_single_blank_path(self):
        g = lat.rnnt_forward(uniform_lattice(1, 0, 2))
        assert g.total_log_prob == pytest.approx(math.log(0.5), abs=1e-12)

    def test_two_path_enumeration(self):
        g = lat.rnnt_forward(uniform_lattice(2, 1, 2))
        assert g.total_log_prob == pytest.approx(math.log(2 / 8), abs=1e-12)

    def test_all_blank_row(self):
        g = lat.rnnt_forward(uniform_lattice(2, 0, 3))
        assert g.total_log_prob == pytest.approx(2 * math.log(1 / 3), abs=1e-12)

    def test_alpha_origin_is_zero(self):
        rng = np.random.default_rng(2)
        g = lat.rnnt_forward(random_lattice(rng, 3, 2, 4))
        assert g.log_alpha[0, 0] == 0.0

    def test_backward_matches_forward_total(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            lattice = random_lattice(rng, int(rng.integers(1, 6)), int(rng.integers(0, 5)), 4)
            fwd = lat.rnnt_forward(lattice)
            bwd = lat.rnnt_backward(lattice)
            assert bwd.log_beta[0, 0] == pytest.approx(fwd.total_log_prob, abs=1e-9)

    def test_terminal_beta_is_final_blank(self):
        rng = np.random.default_rng(4)
        lattice = random_lattice(rng, 3, 2, 4)
        norm = lat.normalize(lattice)
        bwd = lat.rnnt_backward(lattice)
        T, U = lattice.t_len, lattice.u_len
        assert bwd.log_beta[T - 1, U] == pytest.approx(
            norm.raw_logits[T - 1, U, BLANK], abs=1e-12
        )

    def test_cell_pair_bound(self):
        # mass through any single cell never exceeds the total
        rng = np.random.default_rng(5)
        lattice = random_lattice(rng, 4, 3, 4)
        fwd = lat.rnnt_forward(lattice)
        bwd = lat.rnnt_backward(lattice)
        both = fwd.log_alpha + bwd.log_beta
        finite = np.isfinite(both)
        assert np.all(both[finite] <= fwd.total_log_prob + 1e-9)


class TestFullLoss:
    def test_trivial_values(self):
        assert lat.rnnt_loss_full(uniform_lattice(1, 0, 2)) == pytest.approx(
            0.693147, abs=1e-6
        )
        assert lat.rnnt_loss_full(uniform_lattice(2, 1, 2)) == pytest.approx(
            1.386294, abs=1e-6
        )

    def test_degenerate_lattice_loss_near_zero(self):
        # push all mass onto the single staircase path
        T, U, V = 3, 2, 3
        z = np.full((T, U + 1, V), -50.0)
        targets = np.array([1, 2])
        emit_at = [0, 1]  # token u emitted at frame u
        for t in range(T):
            for u in range(U + 1):
                if u < U and t == emit_at[u]:
                    z[t, u, targets[u]] = 50.0
                else:
                    z[t, u, BLANK] = 50.0
        loss = lat.rnnt_loss_full(make_lattice(z, targets))
        assert 0 <= loss < 1e-9

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            lattice = random_lattice(rng, int(rng.integers(1, 5)), int(rng.integers(0, 4)), 5)
            assert lat.rnnt_loss_full(lattice) >= 0.0


class TestBruteForceOracle:
    def test_two_paths(self):
        assert lat.brute_force_loss(uniform_lattice(2, 1, 2)) == pytest.approx(
            1.386294, abs=1e-6
        )

    def test_single_cell_exact(self):
        lattice = uniform_lattice(1, 0, 2)
        assert lat.brute_force_loss(lattice) == lat.rnnt_loss_full(lattice)

    def test_matches_forward_backward(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            lattice = random_lattice(rng, int(rng.integers(1, 6)), int(rng.integers(0, 4)), 4)
            assert abs(
                lat.brute_force_loss(lattice) - lat.rnnt_loss_full(lattice)
            ) < 1e-10

    def test_refuses_path_explosion(self):
        lattice = uniform_lattice(3, 2, 3)
        with pytest.raises(lat.LatticeError):
            lat.brute_force_loss(lattice, path_limit=2)

    def test_path_count(self):
        lattice = uniform_lattice(3, 2, 3)
        n = len(list(lat.iter_path_log_probs(lattice)))
        assert n == math.comb(3 - 1 + 2, 2)


class TestGradient:
    def test_single_cell_value(self):
        lattice = make_lattice(np.zeros((1, 1, 2)), [])
        grad = lat.rnnt_grad(lattice)
        np.testing.assert_allclose(grad[0, 0], [-0.5, 0.5], atol=1e-12)

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(8)
        lattice = random_lattice(rng, 4, 3, 5)
        grad = lat.rnnt_grad(lattice)
        np.testing.assert_allclose(grad.sum(axis=-1), 0.0, atol=1e-9)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        lattice = random_lattice(rng, 4, 3, 5)
        grad = lat.rnnt_grad(lattice)
        ref = fd_grad(lat.rnnt_loss_full, lattice)
        rel = np.abs(grad - ref).max() / np.abs(ref).max()
        assert rel < 1e-5


class TestViterbi:
    def test_single_cell(self):
        lattice = uniform_lattice(1, 0, 2)
        path = lat.viterbi_align(lattice)
        assert path.steps == [(0, 0, BLANK)]
        assert path.log_prob == pytest.approx(math.log(0.5), abs=1e-12)

    def test_uniform_tie_break_prefers_blank_first(self):
        lattice = uniform_lattice(2, 1, 2)
        path = lat.viterbi_align(lattice)
        assert path.steps == [(0, 0, BLANK), (1, 0, 1), (1, 1, BLANK)]
        assert path.log_prob == pytest.approx(3 * math.log(0.5), abs=1e-12)

    def test_path_below_total(self):
        lattice = uniform_lattice(2, 1, 2)
        path = lat.viterbi_align(lattice)
        total = -lat.rnnt_loss_full(lattice)
        assert path.log_prob <= total
        assert total == pytest.approx(-1.3863, abs=1e-4)

    def test_optimal_on_enumerable_instances(self):
        rng = np.random.default_rng(10)
        for _ in range(60):
            lattice = random_lattice(rng, int(rng.integers(1, 6)), int(rng.integers(0, 5)), 4)
            path = lat.viterbi_align(lattice)
            best = max(lat.iter_path_log_probs(lattice))
            assert path.log_prob == best
            lat.validate_path(
                path, lattice.t_len, lattice.u_len, BLANK, lattice.targets
            )


class TestBandMask:
    def test_wide_band_covers_grid(self):
        lattice = uniform_lattice(3, 2, 3)
        path = lat.viterbi_align(lattice)
        b = max(lattice.t_len, lattice.u_len)
        mask = lat.band_mask(path, b, b, 3, 2, BLANK)
        assert mask.valid.all()

    def test_zero_band_keeps_path_cells_only(self):
        lattice = uniform_lattice(2, 1, 2)
        path = lat.viterbi_align(lattice)  # blank-first: emits at t=1
        mask = lat.band_mask(path, 0, 0, 2, 1, BLANK)
        expected = np.array([[True, False], [True, True]])
        np.testing.assert_array_equal(mask.valid, expected)

    def test_small_grid_band_one_all_valid(self):
        path = lat.AlignmentPath(
            steps=[(0, 0, BLANK), (1, 0, 1), (1, 1, BLANK), (2, 1, BLANK)],
            log_prob=0.0,
        )
        mask = lat.band_mask(path, 1, 1, 3, 1, BLANK)
        assert mask.valid.all()

    def test_endpoints_always_valid(self):
        lattice = uniform_lattice(4, 2, 3)
        path = lat.viterbi_align(lattice)
        mask = lat.band_mask(path, 0, 0, 4, 2, BLANK)
        assert mask.valid[0, 0] and mask.valid[3, 2]

    def test_shape_mismatch_rejected(self):
        lattice = uniform_lattice(2, 1, 2)
        path = lat.viterbi_align(lattice)
        with pytest.raises(lat.MaskError):
            lat.band_mask(path, 1, 1, 2, 3, BLANK)


class TestRestrictedLoss:
    def test_full_mask_equals_full_loss(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            lattice = random_lattice(rng, int(rng.integers(1, 5)), int(rng.integers(0, 4)), 4)
            mask = lat.BandMask.full(lattice.t_len, lattice.u_len)
            assert abs(
                lat.restricted_loss(lattice, mask) - lat.rnnt_loss_full(lattice)
            ) < 1e-12

    def test_single_path_mask(self):
        lattice = uniform_lattice(2, 1, 2)
        path = lat.viterbi_align(lattice)
        mask = lat.band_mask(path, 0, 0, 2, 1, BLANK)
        assert lat.restricted_loss(lattice, mask) == pytest.approx(
            3 * math.log(2), abs=1e-12
        )

    def test_never_below_full_loss(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            T, U = int(rng.integers(2, 7)), int(rng.integers(1, 5))
            lattice = random_lattice(rng, T, U, 4)
            path = lat.viterbi_align(lattice)
            b = int(rng.integers(0, 4))
            mask = lat.band_mask(path, b, b, T, U, BLANK)
            assert lat.restricted_loss(lattice, mask) >= lat.rnnt_loss_full(lattice) - 1e-12

    def test_monotone_in_band_width(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            T, U = int(rng.integers(2, 7)), int(rng.integers(1, 5))
            lattice = random_lattice(rng, T, U, 4)
            path = lat.viterbi_align(lattice)
            losses = [
                lat.restricted_loss(lattice, lat.band_mask(path, b, b, T, U, BLANK))
                for b in range(max(T, U) + 1)
            ]
            assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))
            assert abs(losses[-1] - lat.rnnt_loss_full(lattice)) < 1e-12

    def test_disconnected_mask_rejected(self):
        lattice = uniform_lattice(3, 1, 2)
        valid = np.zeros((3, 2), dtype=bool)
        valid[0, 0] = True
        valid[2, 1] = True
        mask = lat.BandMask(valid=valid, b_left=0, b_right=0)
        with pytest.raises(lat.MaskError):
            lat.restricted_loss(lattice, mask)


class TestRestrictedGrad:
    def test_full_mask_equals_full_grad(self):
        rng = np.random.default_rng(14)
        lattice = random_lattice(rng, 4, 2, 4)
        mask = lat.BandMask.full(4, 2)
        np.testing.assert_allclose(
            lat.restricted_grad(lattice, mask), lat.rnnt_grad(lattice), atol=1e-9
        )

    def test_zero_outside_mask(self):
        rng = np.random.default_rng(15)
        lattice = random_lattice(rng, 5, 3, 4)
        path = lat.viterbi_align(lattice)
        mask = lat.band_mask(path, 1, 1, 5, 3, BLANK)
        grad = lat.restricted_grad(lattice, mask)
        outside = ~mask.valid
        assert outside.any()
        assert np.all(grad[outside] == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(16)
        lattice = random_lattice(rng, 4, 2, 4)
        path = lat.viterbi_align(lattice)
        mask = lat.band_mask(path, 1, 1, 4, 2, BLANK)
        grad = lat.restricted_grad(lattice, mask)
        ref = fd_grad(lambda lt: lat.restricted_loss(lt, mask), lattice)
        rel = np.abs(grad - ref).max() / np.abs(ref).max()
        assert rel < 1e-5

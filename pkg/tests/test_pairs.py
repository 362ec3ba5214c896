import itertools
from math import comb

import pytest

from episodic_nca.pairs import (
    PairCounts,
    batch_size_table,
    brute_force_pair_counts,
    check_inequalities,
    episode_layout,
    exploited_fraction,
    extra_pairs,
    nca_pair_counts,
    pn_pair_counts,
)


class TestClosedForms:
    @pytest.mark.parametrize("wnm,expected", [
        ((3, 3, 1), (9, 18)),
        ((32, 5, 11), (1760, 54560)),
        ((64, 1, 7), (448, 28224)),
    ])
    def test_pn(self, wnm, expected):
        c = pn_pair_counts(*wnm)
        assert (c.positives, c.negatives) == expected

    @pytest.mark.parametrize("wnm,expected", [
        ((3, 3, 1), (18, 48)),
        ((64, 1, 7), (1792, 129024)),
        ((64, 3, 5), (1792, 129024)),
        ((2, 1, 1), (2, 4)),
    ])
    def test_nca(self, wnm, expected):
        c = nca_pair_counts(*wnm)
        assert (c.positives, c.negatives) == expected

    @pytest.mark.parametrize("wnm,expected", [((3, 3, 1), 39), ((2, 1, 1), 2)])
    def test_extra(self, wnm, expected):
        assert extra_pairs(*wnm) == expected

    def test_large_episode(self):
        # totals computed by enumeration below, so this also guards the formulas at w=16
        pn = pn_pair_counts(16, 5, 27)
        nca = nca_pair_counts(16, 5, 27)
        assert (pn.positives, pn.negatives) == (2160, 32400)
        assert (nca.positives, nca.negatives) == (7936, 122880)
        assert nca == brute_force_pair_counts(*episode_layout(16, 5, 27), "NCA")

    @pytest.mark.parametrize("wnm", [(1, 1, 1), (2, 0, 1), (2, 1, 0)])
    def test_preconditions(self, wnm):
        for f in (pn_pair_counts, nca_pair_counts, extra_pairs):
            with pytest.raises(ValueError):
                f(*wnm)

    def test_extra_identity_grid(self):
        for w in range(2, 65):
            for n in range(1, 17):
                for m in range(1, 17):
                    pn, nca = pn_pair_counts(w, n, m), nca_pair_counts(w, n, m)
                    assert extra_pairs(w, n, m) == nca.total - pn.total
                    assert nca.positives - pn.positives == w * (m * (m - 1) + n * (n - 1)) // 2

    def test_nca_total_is_all_pairs(self):
        for w, n, m in [(2, 1, 1), (5, 2, 3), (20, 5, 15)]:
            assert nca_pair_counts(w, n, m).total == comb(w * (n + m), 2)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            PairCounts(-1, 0)


class TestBruteForce:
    def test_figure_example(self):
        s, q = episode_layout(3, 3, 1)
        assert brute_force_pair_counts(s, q, "PN") == PairCounts(9, 18)
        assert brute_force_pair_counts(s, q, "NCA") == PairCounts(18, 48)

    def test_layout_order_irrelevant(self, rng):
        s, q = episode_layout(4, 2, 3)
        assert brute_force_pair_counts(rng.permutation(s), rng.permutation(q), "nca") == nca_pair_counts(4, 2, 3)

    def test_malformed(self):
        with pytest.raises(ValueError):
            brute_force_pair_counts([0, 1], [0, 2], "PN")
        with pytest.raises(ValueError):
            brute_force_pair_counts([0, 1], [0, 1], "XYZ")

    def test_small_grid(self):
        for w, n, m in itertools.product(range(2, 6), range(1, 4), range(1, 4)):
            s, q = episode_layout(w, n, m)
            assert brute_force_pair_counts(s, q, "PN") == pn_pair_counts(w, n, m)
            assert brute_force_pair_counts(s, q, "NCA") == nca_pair_counts(w, n, m)


class TestInequalities:
    def test_edge(self):
        r = check_inequalities(2, 1, 1)
        assert r.positives_equal and r.negatives_strict and r.ok

    def test_grid(self):
        for w in range(2, 65):
            for n in range(1, 17):
                for m in range(1, 17):
                    r = check_inequalities(w, n, m)
                    assert r.ok
                    assert r.positives_equal == (n == 1 and m == 1)


class TestBatchTable:
    def test_rows(self):
        rows = {name: (c.positives, c.negatives, c.total) for name, c in batch_size_table(512)}
        assert rows == {
            "NCA": (1792, 129024, 130816),
            "5-shot a=16": (1760, 54560, 56320),
            "5-shot a=8": (960, 60480, 61440),
            "5-shot a=32": (2160, 32400, 34560),
            "1-shot a=8": (448, 28224, 28672),
        }

    def test_exploited_fraction(self):
        # (n=5, a=8, b=256) -> (32, 5, 3)
        assert exploited_fraction(32, 5, 3) == pytest.approx(15360 / 32640, rel=0, abs=0)
        assert 0 < exploited_fraction(32, 5, 3) < 1

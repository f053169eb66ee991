"""Verdict combination, volumetry, and clinical-impact report tests."""

import numpy as np
import pytest

from lvcoverage import assess
from lvcoverage import phantom as ph
from lvcoverage.errors import InputError


def make_stack(pool_px_per_slice, spacing=(1.8, 1.8, 8.0), volume_id="v"):
    """Manual VolumeStack with the requested pool pixel count per slice."""
    n = len(pool_px_per_slice)
    labels = np.zeros((n, 140, 140), np.uint8)
    for s, count in enumerate(pool_px_per_slice):
        flat = labels[s].reshape(-1)
        flat[:count] = 1
    slices = (labels == 1).astype(np.float32) * 0.8 + 0.1
    return ph.VolumeStack(slices=slices, labels=labels, spacing=spacing,
                          has_base=True, has_apex=True, volume_id=volume_id,
                          seed=0)


class TestVerdictRule:
    def test_rule_table(self):
        assert assess.verdict_from_probabilities(0.1, 0.1) == "Full"
        assert assess.verdict_from_probabilities(0.9, 0.2) == "MBS"
        assert assess.verdict_from_probabilities(0.2, 0.9) == "MAS"
        assert assess.verdict_from_probabilities(0.9, 0.9) == "MBS+MAS"

    def test_threshold_is_strict(self):
        assert assess.verdict_from_probabilities(0.5, 0.5, threshold=0.5) == "Full"

    def test_mbs_monotonicity(self, rng):
        # Raising the MBS score never clears an MBS flag.
        for _ in range(100):
            lo, hi = np.sort(rng.random(2))
            mas = float(rng.random())
            thr = float(rng.random())
            v_lo = assess.verdict_from_probabilities(lo, mas, thr)
            v_hi = assess.verdict_from_probabilities(hi, mas, thr)
            if "MBS" in v_lo:
                assert "MBS" in v_hi


class TestClassifyCoverage:
    @staticmethod
    def _const_model(value):
        return lambda blocks: np.full(np.asarray(blocks).shape[0], value)

    def test_extreme_strategy_uses_end_triplets(self, quiet_volume):
        def graded(blocks):
            # Score i-th triplet by its index so ends are identifiable.
            n = np.asarray(blocks).shape[0]
            return np.linspace(0.1, 0.9, n)

        verdict = assess.classify_coverage(quiet_volume, graded, graded)
        assert verdict.mbs_probability == pytest.approx(0.1)
        assert verdict.mas_probability == pytest.approx(0.9)
        assert len(verdict.mbs_trace) == quiet_volume.n_slices - 2

    def test_max_strategy_takes_maximum(self, quiet_volume):
        def graded(blocks):
            n = np.asarray(blocks).shape[0]
            return np.linspace(0.1, 0.7, n)

        verdict = assess.classify_coverage(quiet_volume, graded, graded,
                                           strategy="max")
        assert verdict.mbs_probability == pytest.approx(0.7)
        assert verdict.mas_probability == pytest.approx(0.7)

    def test_verdict_matches_rule(self, quiet_volume):
        verdict = assess.classify_coverage(
            quiet_volume, self._const_model(0.9), self._const_model(0.2))
        assert verdict.verdict == "MBS"

    def test_strategies_agree_on_constant_scores(self, quiet_volume):
        a = assess.classify_coverage(quiet_volume, self._const_model(0.8),
                                     self._const_model(0.1))
        b = assess.classify_coverage(quiet_volume, self._const_model(0.8),
                                     self._const_model(0.1), strategy="max")
        assert a.verdict == b.verdict == "MBS"

    def test_short_stacks_unrepresentable(self):
        # Volumes below 3 slices are rejected at construction, so the
        # classifier can never receive one.
        from lvcoverage.errors import SpecError
        with pytest.raises(SpecError):
            ph.VolumeStack(slices=np.zeros((2, 10, 10), np.float32),
                           labels=np.zeros((2, 10, 10), np.uint8),
                           spacing=(1, 1, 1), has_base=True, has_apex=True,
                           volume_id="x", seed=0)


class TestBloodVolume:
    def test_thousand_pixels(self):
        vol = make_stack([0, 1000, 0])
        assert assess.blood_volume(vol) == pytest.approx(25.92)

    def test_zero_masks(self):
        assert assess.blood_volume(make_stack([0, 0, 0])) == 0.0

    def test_additive_over_slices_linear_in_dz(self):
        a = make_stack([100, 200, 300])
        parts = [assess.blood_volume(make_stack([100, 0, 0])),
                 assess.blood_volume(make_stack([0, 200, 0])),
                 assess.blood_volume(make_stack([0, 0, 300]))]
        assert assess.blood_volume(a) == pytest.approx(sum(parts))
        double_dz = make_stack([100, 200, 300], spacing=(1.8, 1.8, 16.0))
        assert assess.blood_volume(double_dz) == pytest.approx(
            2 * assess.blood_volume(a))

    def test_phantom_volume_matches_analytic_shapes(self, quiet_volume):
        raster_ml = assess.blood_volume(quiet_volume)
        dz = quiet_volume.spacing[2]
        analytic_ml = quiet_volume.analytic_pool_mm2.sum() * dz / 1000.0
        assert abs(raster_ml - analytic_ml) / analytic_ml < 0.03

    def test_ablation_never_increases_volume(self, quiet_volume):
        full = assess.blood_volume(quiet_volume)
        assert assess.blood_volume(quiet_volume.drop_slices(base=True)) <= full
        assert assess.blood_volume(quiet_volume.drop_slices(apex=True)) <= full


class TestClinicalImpact:
    def _paired_cohort(self, n=12, seed=17):
        spec = ph.PhantomSpec(noise_sd=0.0, texture_amp=0.0)
        pairs = []
        for i in range(n):
            ed = ph.gen_volume(spec, np.random.default_rng([seed, i]),
                               phase="ED", volume_id=f"{i:04d}")
            es = ph.gen_volume(spec, np.random.default_rng([seed, i]),
                               phase="ES", volume_id=f"{i:04d}")
            pairs.append((ed, es))
        return pairs

    def test_noop_ablation_zero_effects(self):
        # End slices carry no pool, so dropping them changes nothing.
        ed = make_stack([0, 500, 400, 300, 0], volume_id="p")
        es = make_stack([0, 300, 250, 200, 0], volume_id="p")
        report = assess.clinical_impact([(ed, es)])
        for name in assess.MEASURES:
            assert report.effects[name]["MBS"] == pytest.approx(0.0)
            assert report.effects[name]["MAS"] == pytest.approx(0.0)

    def test_phantom_sign_pattern(self):
        report = assess.clinical_impact(self._paired_cohort())
        eff = report.effects
        assert eff["LVEDV"]["MBS"] < 0 and eff["LVESV"]["MBS"] < 0
        assert eff["LVESV"]["MBS"] < eff["LVEDV"]["MBS"]  # stronger ESV loss
        assert eff["LVEF"]["MBS"] > 0
        assert abs(eff["LVEDV"]["MBS"]) > abs(eff["LVEDV"]["MAS"])

    def test_ef_sign_algebra_per_subject(self):
        # EF rises exactly when the ES loss fraction exceeds the ED one.
        for ed, es in self._paired_cohort(n=6, seed=23):
            edv = assess.blood_volume(ed)
            esv = assess.blood_volume(es)
            edv_b = assess.blood_volume(ed.drop_slices(base=True))
            esv_b = assess.blood_volume(es.drop_slices(base=True))
            ef = 1 - esv / edv
            ef_b = 1 - esv_b / edv_b
            es_loss = 1 - esv_b / esv
            ed_loss = 1 - edv_b / edv
            assert (ef_b > ef) == (es_loss > ed_loss)

    def test_unpaired_rejected(self):
        ed = make_stack([0, 100, 0], volume_id="a")
        es = make_stack([0, 80, 0], volume_id="b")
        with pytest.raises(InputError, match="unpaired"):
            assess.clinical_impact([(ed, es)])

    def test_ablated_input_rejected(self, quiet_volume):
        broken = quiet_volume.drop_slices(base=True)
        with pytest.raises(InputError):
            assess.clinical_impact([(broken, broken)])

    def test_report_text_layout(self):
        report = assess.clinical_impact(self._paired_cohort(n=3))
        text = assess.clinical_report_text(report)
        lines = text.strip().splitlines()
        assert lines[0].split("\t")[0] == "measure"
        assert lines[1].startswith("LVEDV")
        assert lines[4].startswith("LVEF")


class TestVerdictRow:
    def test_field_order(self):
        verdict = assess.CoverageVerdict(
            volume_id="0007", mbs_probability=0.25, mas_probability=0.75,
            verdict="MAS", threshold=0.5, mbs_trace=(0.25,), mas_trace=(0.75,))
        row = assess.verdict_row(verdict).split("\t")
        assert row[0] == "0007"
        assert float(row[1]) == pytest.approx(0.25)
        assert row[3] == "MAS"

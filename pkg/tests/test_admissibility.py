"""Random-state admissibility validation of the loading models."""

import numpy as np
import pytest

from fwdvol.admissibility import (
    ItemResult,
    SampleSpec,
    ValidationReport,
    validate_hypotheses,
)
from fwdvol.volvol import (
    AdversarialVolVol,
    ConstantVolVol,
    TotalVarianceVolVol,
    ZeroVolVol,
)

ITEM_NAMES = [
    "loading_growth_bounded",
    "derivative_loading_in_h1",
    "locally_lipschitz",
    "derivative_vol_bound",
    "short_end_sign",
]


@pytest.fixture(scope="module")
def small_spec():
    return SampleSpec(n_samples=2000, seed=7, n_nodes=33)


class TestSampleSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SampleSpec(n_samples=5)
        with pytest.raises(ValueError):
            SampleSpec(spot_low=0.0)
        with pytest.raises(ValueError):
            SampleSpec(level_low=0.1, level_high=0.05)
        with pytest.raises(ValueError):
            SampleSpec(wiggle=1.0)
        with pytest.raises(ValueError):
            SampleSpec(pair_scale=0.5)

    def test_grid(self):
        spec = SampleSpec(n_nodes=17, horizon=2.0)
        assert spec.grid.n_nodes == 17
        assert spec.grid.horizon == 2.0


class TestShippedModelsPass:
    @pytest.mark.parametrize("model", [
        ZeroVolVol(),
        ConstantVolVol(),
        ConstantVolVol(beta1=0.5, beta2=0.25),
        TotalVarianceVolVol(),
        TotalVarianceVolVol(beta1=0.3, beta2=1.0, cutoff_level=10.0),
    ])
    def test_passes_all_items(self, model, small_spec):
        report = validate_hypotheses(model, small_spec)
        assert report.passed, [i.to_json_dict() for i in report.failed_items()]
        assert [i.name for i in report.items] == ITEM_NAMES

    def test_report_metadata(self, small_spec):
        report = validate_hypotheses(ConstantVolVol(), small_spec)
        assert report.model == "ConstantVolVol"
        assert report.n_samples == 2000
        assert report.seed == 7

    def test_extrema_are_recorded(self, small_spec):
        report = validate_hypotheses(TotalVarianceVolVol(), small_spec)
        by_name = {i.name: i for i in report.items}
        # The families are built from factors bounded by 1 and a short gain
        # below sqrt(level) <= sqrt(0.3), so the growth constant is small.
        assert 0 < by_name["loading_growth_bounded"].extremum < 10.0
        assert by_name["derivative_loading_in_h1"].extremum > 0
        assert by_name["locally_lipschitz"].extremum > 0
        assert by_name["short_end_sign"].extremum >= 0

    def test_zero_model_has_zero_extrema(self, small_spec):
        report = validate_hypotheses(ZeroVolVol(), small_spec)
        by_name = {i.name: i for i in report.items}
        assert by_name["loading_growth_bounded"].extremum == 0.0
        assert by_name["derivative_loading_in_h1"].extremum == 0.0
        assert by_name["derivative_vol_bound"].extremum == 0.0
        # The discriminant of the zero model is the curve head itself.
        assert by_name["short_end_sign"].extremum > 0

    def test_deterministic_for_fixed_seed(self, small_spec):
        a = validate_hypotheses(ConstantVolVol(), small_spec)
        b = validate_hypotheses(ConstantVolVol(), small_spec)
        assert a == b


class TestAdversarialModelFails:
    def test_sign_item_fails_with_witness(self, small_spec):
        report = validate_hypotheses(AdversarialVolVol(), small_spec)
        assert not report.passed
        failed = report.failed_items()
        assert [i.name for i in failed] == ["short_end_sign"]
        item = failed[0]
        assert item.extremum < 0
        w = item.witness
        assert set(w) == {
            "spot", "strike", "log_moneyness", "curve_head", "discriminant",
        }
        assert w["discriminant"] == item.extremum
        assert abs(w["log_moneyness"]) > 0.5  # needs to be away from the money
        assert w["curve_head"] > 0  # positive curve, negative discriminant

    def test_witness_reproduces_the_violation(self, small_spec):
        # Recompute the discriminant from the witness data alone.
        report = validate_hypotheses(AdversarialVolVol(), small_spec)
        w = [i for i in report.items if i.name == "short_end_sign"][0].witness
        u2 = 2.0 * np.sqrt(w["curve_head"])
        rebuilt = w["curve_head"] - (u2 * w["log_moneyness"]) ** 2
        assert rebuilt == pytest.approx(w["discriminant"], rel=1e-12)


class TestSerialization:
    def test_report_json_shape(self, small_spec):
        report = validate_hypotheses(AdversarialVolVol(), small_spec)
        d = report.to_json_dict()
        assert set(d) == {"model", "n_samples", "seed", "pass", "items"}
        assert d["pass"] is False
        assert len(d["items"]) == len(ITEM_NAMES)
        sign = d["items"][-1]
        assert sign["witness"] is not None
        assert isinstance(sign["witness"]["discriminant"], float)

    def test_item_json(self):
        item = ItemResult(name="x", passed=True, extremum=1.5, detail="d")
        assert item.to_json_dict() == {
            "name": "x", "pass": True, "extremum": 1.5, "detail": "d",
            "witness": None,
        }

    def test_report_passed_property(self):
        ok = ItemResult("a", True, 0.0, "")
        bad = ItemResult("b", False, None, "")
        report = ValidationReport("M", 10, 1, (ok, bad))
        assert not report.passed
        assert report.failed_items() == [bad]

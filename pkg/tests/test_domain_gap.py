"""Inter-class variance and indefinable-boundary scoring."""

import numpy as np
import pytest

from protoadapt.domain_gap import (
    ib_level,
    ib_report,
    ib_score,
    icv,
    icv_level,
    icv_report,
)
from protoadapt.errors import ValidationError

# benchmark datasets with published survey and embedding statistics
ICV_TABLE = [
    ("artaxor", 0.138, "small"),
    ("clipart1k", 0.171, "large"),
    ("dior", 0.155, "medium"),
    ("neu-det", 0.183, "large"),
    ("uodd", 0.132, "small"),
]

IB_TABLE = [
    ("artaxor", 0.278, "slight"),
    ("clipart1k", 0.804, "slight"),
    ("dior", 0.718, "slight"),
    ("deepfish", 3.800, "moderate"),
    ("neu-det", 4.660, "significant"),
    ("uodd", 5.010, "significant"),
]


class TestIcv:
    def test_orthonormal_pair(self):
        assert icv(np.eye(2)) == 0.25

    def test_identical_unit_rows(self):
        assert icv(np.array([[1.0, 0.0], [1.0, 0.0]])) == 0.5

    def test_single_class_undefined(self):
        assert icv(np.array([[1.0, 0.0]])) is None

    def test_matches_direct_mean(self):
        rng = np.random.default_rng(0)
        f = rng.standard_normal((5, 7))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        n, d = f.shape
        expected = (f @ f.T).sum() / (n * n * d)
        assert abs(icv(f) - expected) < 1e-15

    def test_non_matrix_rejected(self):
        with pytest.raises(ValidationError):
            icv(np.ones(3))

    @pytest.mark.parametrize("dataset_id,value,level", ICV_TABLE)
    def test_published_levels(self, dataset_id, value, level):
        assert icv_level(value) == level

    def test_boundaries_fall_to_lower_level(self):
        # thirds of [0.112, 0.190] break at 0.138 and 0.164
        assert icv_level(0.138) == "small"
        assert icv_level(0.1380001) == "medium"
        assert icv_level(0.164) == "medium"
        assert icv_level(0.1640001) == "large"

    def test_out_of_range_clamps(self):
        assert icv_level(0.0) == "small"
        assert icv_level(1.0) == "large"

    def test_invalid_range_rejected(self):
        with pytest.raises(ValidationError):
            icv_level(0.15, low=0.2, high=0.1)

    def test_report(self):
        report = icv_report("toy", np.eye(2))
        assert report.icv_value == 0.25
        assert report.icv_level == "large"
        assert report.ib_value is None
        single = icv_report("single", np.array([[1.0, 0.0]]))
        assert single.icv_value is None and single.icv_level is None


class TestIb:
    def test_all_slight(self):
        assert ib_score(1.0, 0.0, 0.0) == 0.0

    def test_all_significant(self):
        assert ib_score(0.0, 0.0, 1.0) == 6.0

    def test_mixed_survey(self):
        assert abs(ib_score(0.17, 0.44, 0.39) - 3.22) < 1e-12

    def test_percentages_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            ib_score(0.5, 0.5, 0.5)

    def test_negative_percentage_rejected(self):
        with pytest.raises(ValidationError):
            ib_score(-0.1, 0.6, 0.5)

    @pytest.mark.parametrize("dataset_id,value,level", IB_TABLE)
    def test_published_levels(self, dataset_id, value, level):
        assert ib_level(value) == level

    def test_boundary_ownership(self):
        assert ib_level(0.0) == "slight"
        assert ib_level(2.0) == "moderate"
        assert ib_level(4.0) == "significant"
        assert ib_level(6.0) == "significant"

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            ib_level(-0.1)
        with pytest.raises(ValidationError):
            ib_level(6.1)

    def test_report(self):
        report = ib_report("toy", 0.17, 0.44, 0.39)
        assert abs(report.ib_value - 3.22) < 1e-12
        assert report.ib_level == "moderate"
        payload = report.as_dict()
        assert payload["dataset_id"] == "toy"
        assert payload["icv_value"] is None

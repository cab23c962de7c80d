import numpy as np
import pytest

from snpgibbs.model import (
    ADDITIVE_DOMINANCE,
    DataValidationError,
    Dataset,
    FamilyDesign,
    GenotypeMatrix,
    ImputationPrior,
    PhenotypeVector,
    PriorHyperparams,
    decode_genotypes,
    default_priors,
    encode_genotypes,
    family_design,
    genotype_column_values,
    snp_design_matrix,
    validate_dataset,
)
from conftest import make_dataset


class TestEncode:
    def test_stated_mapping(self):
        raw = [["GG"], ["GC"], ["CC"], ["NA"]]
        gm, warnings = encode_genotypes(raw)
        assert list(gm.codes[:, 0]) == [1, 0, -1, 0]
        assert list(gm.missing_mask[:, 0]) == [False, False, False, True]
        assert not warnings

    def test_monomorphic_warning(self):
        gm, warnings = encode_genotypes([["GG"], ["GG"], ["NA"]])
        assert list(gm.codes[:2, 0]) == [1, 1]
        assert gm.missing_mask[2, 0]
        assert any("monomorphic" in w for w in warnings)

    def test_four_categories_rejected(self):
        raw = [["AA"], ["AT"], ["TT"], ["CC"]]
        with pytest.raises(DataValidationError, match="4 categories"):
            encode_genotypes(raw)

    def test_all_missing_column_rejected(self):
        with pytest.raises(DataValidationError, match="no observed"):
            encode_genotypes([["NA"], ["NA"]])

    def test_two_het_calls_rejected(self):
        with pytest.raises(DataValidationError, match="heterozygous"):
            encode_genotypes([["AT"], ["TA"], ["AA"]])

    def test_round_trip_on_observed(self):
        rng = np.random.default_rng(3)
        calls = np.array(["CC", "CG", "GG", "NA"], dtype=object)
        raw = calls[rng.integers(0, 4, size=(30, 4))]
        gm, _ = encode_genotypes(raw)
        back = decode_genotypes(gm)
        gm2, _ = encode_genotypes(back)
        assert np.array_equal(gm.codes[~gm.missing_mask], gm2.codes[~gm2.missing_mask])
        assert np.array_equal(gm.missing_mask, gm2.missing_mask)
        assert np.array_equal(back[~gm.missing_mask], raw[~gm.missing_mask])


class TestDesignCoding:
    def test_signed_matrix_is_codes(self):
        codes = np.array([[1, -1], [0, 1]], dtype=np.int8)
        assert np.array_equal(snp_design_matrix(codes, "signed"), codes.astype(float))

    def test_additive_dominance_expansion(self):
        codes = np.array([[-1], [0], [1]], dtype=np.int8)
        Zd = snp_design_matrix(codes, ADDITIVE_DOMINANCE)
        assert np.array_equal(Zd, np.array([[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))

    def test_column_values_match_matrix(self):
        codes = np.array([[-1, 0], [1, 0], [0, 1]], dtype=np.int8)
        Zd = snp_design_matrix(codes, ADDITIVE_DOMINANCE)
        for j in range(2):
            vals = genotype_column_values(codes[:, j], ADDITIVE_DOMINANCE)
            assert np.array_equal(Zd[:, 2 * j : 2 * j + 2], vals)

    def test_gamma_labels(self):
        data, _ = make_dataset(n=10, s=2, coding=ADDITIVE_DOMINANCE)
        assert data.gamma_labels() == ("snp1:a", "snp1:d", "snp2:a", "snp2:d")


class TestPriors:
    def test_defaults(self):
        priors = default_priors()
        assert (priors.a, priors.b, priors.c, priors.d) == (2.0, 1.0, 2.0, 1.0)

    def test_zero_rejected(self):
        with pytest.raises(DataValidationError):
            PriorHyperparams(a=0.0)

    def test_half_everywhere_accepted(self):
        priors = PriorHyperparams(0.5, 0.5, 0.5, 0.5)
        assert priors.a == 0.5


class TestImputationPrior:
    def test_uniform_log_weights_zero(self):
        prior = ImputationPrior()
        assert np.array_equal(prior.log_weights(np.array([0, 1]), 0), np.zeros((2, 3)))

    def test_weighted_validation(self):
        w = np.full((2, 2, 3), 1.0 / 3.0)
        prior = ImputationPrior("weighted", w)
        assert prior.weights.shape == (2, 2, 3)
        bad = w.copy()
        bad[0, 0] = (0.5, 0.2, 0.2)
        with pytest.raises(DataValidationError, match="sum to 1"):
            ImputationPrior("weighted", bad)

    def test_negative_weight_rejected(self):
        w = np.full((1, 1, 3), 1.0 / 3.0)
        w[0, 0] = (-0.1, 0.55, 0.55)
        with pytest.raises(DataValidationError, match=">= 0"):
            ImputationPrior("weighted", w)


class TestValidation:
    def test_clean_dataset_passes(self):
        data, _ = make_dataset(n=20, s=4, missing=0.10, seed=2)
        report = validate_dataset(data)
        assert report.ok
        assert abs(report.overall_missingness - 0.10) < 0.01

    def test_high_missingness_warns(self):
        data, _ = make_dataset(n=20, s=5, missing=0.20, seed=2)
        report = validate_dataset(data)
        assert report.ok
        assert any("missingness" in w for w in report.warnings)

    def test_duplicate_design_column_fails_construction(self):
        X = np.ones((10, 2))
        with pytest.raises(DataValidationError, match="rank"):
            FamilyDesign(X)

    def test_dimension_mismatch(self):
        data, _ = make_dataset(n=10, s=2)
        with pytest.raises(DataValidationError, match="dimensions"):
            Dataset(
                genotypes=data.genotypes,
                phenotypes=PhenotypeVector(np.zeros(9)),
                design=data.design,
                kinship=data.kinship,
            )

    def test_validation_idempotent(self):
        data, _ = make_dataset(n=15, s=3, missing=0.1, seed=4)
        r1 = validate_dataset(data)
        r2 = validate_dataset(data)
        assert r1.errors == r2.errors and r1.warnings == r2.warnings
        assert r1.overall_missingness == r2.overall_missingness

    def test_phenotype_nan_rejected(self):
        with pytest.raises(DataValidationError, match="finite"):
            PhenotypeVector(np.array([1.0, np.nan]))

    def test_family_design_from_labels(self):
        fd = family_design(["a", "b", "a", "b", "c"])
        assert fd.design.shape == (5, 3)
        assert fd.names() == ("a", "b", "c")
        assert np.array_equal(fd.design.sum(axis=1), np.ones(5))


class TestGenotypeMatrix:
    def test_all_masked_column_rejected(self):
        codes = np.zeros((3, 2), dtype=np.int8)
        mask = np.zeros((3, 2), dtype=bool)
        mask[:, 1] = True
        with pytest.raises(DataValidationError, match="no observed"):
            GenotypeMatrix(codes, mask)

    def test_bad_code_rejected(self):
        codes = np.array([[2]], dtype=np.int8)
        with pytest.raises(DataValidationError, match="-1, 0 or"):
            GenotypeMatrix(codes, np.zeros((1, 1), dtype=bool))

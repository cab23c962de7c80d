"""Core data model: genotype coding, dataset assembly, prior configuration.

Genotypes are coded -1/0/+1 (the two homozygotes and the heterozygote).
A dataset can expose SNPs to the linear model either directly through that
signed coding (one design column per SNP) or through an additive +
dominance pair per SNP (additive -1/0/+1 and dominance 0/1/0), which
separates allele-dosage effects from heterozygote deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .pedigree import RelationshipMatrix

__all__ = [
    "DataValidationError",
    "GenotypeMatrix",
    "PhenotypeVector",
    "FamilyDesign",
    "PriorHyperparams",
    "ImputationPrior",
    "Dataset",
    "ValidationReport",
    "encode_genotypes",
    "decode_genotypes",
    "validate_dataset",
    "default_priors",
    "family_design",
    "snp_design_matrix",
    "genotype_column_values",
    "SIGNED",
    "ADDITIVE_DOMINANCE",
    "GENOTYPE_CODES",
]

SIGNED = "signed"
ADDITIVE_DOMINANCE = "additive_dominance"

# candidate genotype codes, in the order imputation probabilities are laid out
GENOTYPE_CODES = np.array([-1, 0, 1], dtype=np.int8)

MISSINGNESS_WARN_FRACTION = 0.15


class DataValidationError(ValueError):
    """Dataset contents violate a hard structural requirement."""


@dataclass(frozen=True)
class GenotypeMatrix:
    """n x s coded genotypes plus an explicit missingness mask.

    ``codes`` holds -1/0/+1 for observed cells; masked cells may hold any
    placeholder (by convention 0) and are defined only through the mask.
    """

    codes: np.ndarray
    missing_mask: np.ndarray
    snp_names: tuple[str, ...] = ()
    categories: tuple[dict, ...] = ()  # per-SNP {code: category label}

    def __post_init__(self):
        codes = np.asarray(self.codes)
        mask = np.asarray(self.missing_mask, dtype=bool)
        if codes.ndim != 2:
            raise DataValidationError("genotype codes must be a 2-d matrix")
        if codes.shape != mask.shape:
            raise DataValidationError("codes and missing mask shapes differ")
        observed = codes[~mask]
        if observed.size and not np.isin(observed, GENOTYPE_CODES).all():
            raise DataValidationError("observed genotype codes must be -1, 0 or +1")
        if mask.size and mask.all(axis=0).any():
            col = int(np.flatnonzero(mask.all(axis=0))[0])
            name = self.snp_names[col] if self.snp_names else str(col)
            raise DataValidationError(f"SNP column {name!r} has no observed entries")
        object.__setattr__(self, "codes", codes.astype(np.int8))
        object.__setattr__(self, "missing_mask", mask)
        if self.snp_names and len(self.snp_names) != codes.shape[1]:
            raise DataValidationError("snp_names length does not match column count")

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def s(self) -> int:
        return self.codes.shape[1]

    @property
    def missing_fraction(self) -> float:
        return float(self.missing_mask.mean()) if self.missing_mask.size else 0.0

    def column_missing_fractions(self) -> np.ndarray:
        return self.missing_mask.mean(axis=0)

    def names(self) -> tuple[str, ...]:
        if self.snp_names:
            return self.snp_names
        return tuple(f"snp{j + 1}" for j in range(self.s))


@dataclass(frozen=True)
class PhenotypeVector:
    """Continuous trait values, one per individual; no missing entries."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise DataValidationError("phenotypes must be a 1-d vector")
        if not np.isfinite(vals).all():
            raise DataValidationError("phenotypes must be finite (no missing values)")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FamilyDesign:
    """n x p covariate design, typically 0/1 family-membership indicators."""

    design: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        if X.ndim != 2:
            raise DataValidationError("design must be a 2-d matrix")
        n, p = X.shape
        if p >= n:
            raise DataValidationError(f"design needs p < n, got p={p}, n={n}")
        if np.linalg.matrix_rank(X) < p:
            raise DataValidationError("design matrix is rank deficient")
        object.__setattr__(self, "design", X)
        if self.labels and len(self.labels) != p:
            raise DataValidationError("design labels length does not match p")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def names(self) -> tuple[str, ...]:
        if self.labels:
            return self.labels
        return tuple(f"beta{k + 1}" for k in range(self.p))


def family_design(labels: Sequence[str]) -> FamilyDesign:
    """Cell-means indicator design from per-individual family labels."""
    labels = [str(x) for x in labels]
    families = sorted(set(labels))
    X = np.zeros((len(labels), len(families)))
    index = {f: k for k, f in enumerate(families)}
    for i, f in enumerate(labels):
        X[i, index[f]] = 1.0
    return FamilyDesign(X, tuple(families))


@dataclass(frozen=True)
class PriorHyperparams:
    """Inverted-gamma shapes/scales for the two variance parameters."""

    a: float = 2.0  # sigma^2 shape
    b: float = 1.0  # sigma^2 scale
    c: float = 2.0  # phi^2 shape
    d: float = 1.0  # phi^2 scale

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            if not getattr(self, name) > 0:
                raise DataValidationError(f"prior hyperparameter {name} must be > 0")


def default_priors() -> PriorHyperparams:
    """Documented defaults: both prior means equal 1 (shape 2, scale 1)."""
    return PriorHyperparams()


@dataclass(frozen=True)
class ImputationPrior:
    """Per-genotype prior weights used when drawing missing genotypes.

    ``uniform`` gives each genotype class equal weight. ``weighted`` mode
    carries an n x s x 3 table of probabilities over codes (-1, 0, +1),
    e.g. Mendelian-transmission weights derived from parental genotypes.
    """

    mode: str = "uniform"
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("uniform", "weighted"):
            raise DataValidationError(f"unknown imputation prior mode {self.mode!r}")
        if self.mode == "weighted":
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 3 or w.shape[2] != 3:
                raise DataValidationError("weights must have shape (n, s, 3)")
            if (w < 0).any():
                raise DataValidationError("imputation prior weights must be >= 0")
            if np.max(np.abs(w.sum(axis=2) - 1.0)) > 1e-12:
                raise DataValidationError("each weight triple must sum to 1")
            object.__setattr__(self, "weights", w)

    def log_weights(self, rows: np.ndarray, col: int) -> np.ndarray:
        """Log prior weights for the given cells, shape (len(rows), 3)."""
        if self.mode == "uniform":
            return np.zeros((len(rows), 3))
        with np.errstate(divide="ignore"):
            return np.log(self.weights[rows, col, :])


@dataclass(frozen=True)
class Dataset:
    """Genotypes, phenotypes, covariate design and kinship, dimension-checked."""

    genotypes: GenotypeMatrix
    phenotypes: PhenotypeVector
    design: FamilyDesign
    kinship: RelationshipMatrix
    snp_coding: str = SIGNED
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.snp_coding not in (SIGNED, ADDITIVE_DOMINANCE):
            raise DataValidationError(f"unknown snp coding {self.snp_coding!r}")
        n = self.genotypes.n
        if self.phenotypes.n != n or self.design.n != n or self.kinship.dim != n:
            raise DataValidationError(
                "inconsistent dimensions: "
                f"genotypes n={n}, phenotypes n={self.phenotypes.n}, "
                f"design n={self.design.n}, kinship dim={self.kinship.dim}"
            )
        if self.ids and len(self.ids) != n:
            raise DataValidationError("ids length does not match n")

    @property
    def n(self) -> int:
        return self.genotypes.n

    @property
    def s(self) -> int:
        return self.genotypes.s

    @property
    def design_dim(self) -> int:
        return self.s if self.snp_coding == SIGNED else 2 * self.s

    @property
    def y(self) -> np.ndarray:
        return self.phenotypes.values

    @property
    def X(self) -> np.ndarray:
        return self.design.design

    @property
    def R(self) -> np.ndarray:
        return self.kinship.entries

    def gamma_labels(self) -> tuple[str, ...]:
        names = self.genotypes.names()
        if self.snp_coding == SIGNED:
            return names
        out = []
        for name in names:
            out.extend((f"{name}:a", f"{name}:d"))
        return tuple(out)

    def design_columns_of_snp(self, j: int) -> tuple[int, ...]:
        if self.snp_coding == SIGNED:
            return (j,)
        return (2 * j, 2 * j + 1)


def genotype_column_values(codes: np.ndarray, coding: str) -> np.ndarray:
    """Design values contributed by one SNP column of genotype codes.

    Returns shape (n, 1) for signed coding and (n, 2) for additive +
    dominance coding.
    """
    codes = np.asarray(codes, dtype=float)
    if coding == SIGNED:
        return codes[:, None]
    if coding == ADDITIVE_DOMINANCE:
        return np.column_stack([codes, (codes == 0).astype(float)])
    raise DataValidationError(f"unknown snp coding {coding!r}")


def snp_design_matrix(codes: np.ndarray, coding: str) -> np.ndarray:
    """Full SNP design matrix from an n x s genotype code matrix."""
    codes = np.asarray(codes, dtype=float)
    if coding == SIGNED:
        return codes.copy()
    cols = [genotype_column_values(codes[:, j], coding) for j in range(codes.shape[1])]
    return np.hstack(cols)


@dataclass
class ValidationReport:
    """Outcome of dataset validation: hard errors, warnings, missingness."""

    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    overall_missingness: float = 0.0
    column_missingness: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise DataValidationError("; ".join(self.errors))


def validate_dataset(d: Dataset) -> ValidationReport:
    """Check dataset invariants; pure and idempotent.

    Dimension mismatches are caught at Dataset construction; this re-checks
    the numerically expensive invariants (design rank, kinship positive
    definiteness) and reports missingness statistics, warning when overall
    missingness exceeds the level beyond which estimates become unreliable.
    """
    report = ValidationReport()
    X = d.X
    if np.linalg.matrix_rank(X) < X.shape[1]:
        report.errors.append("design matrix is rank deficient")
    if not d.kinship.is_positive_definite():
        report.errors.append("kinship matrix is not positive definite")
    if d.phenotypes.n != d.n or d.design.n != d.n or d.kinship.dim != d.n:
        report.errors.append("dimension mismatch across dataset members")
    report.overall_missingness = d.genotypes.missing_fraction
    report.column_missingness = d.genotypes.column_missing_fractions()
    if report.overall_missingness > MISSINGNESS_WARN_FRACTION:
        report.warnings.append(
            f"overall missingness {report.overall_missingness:.1%} exceeds "
            f"{MISSINGNESS_WARN_FRACTION:.0%}; interpret estimates with caution"
        )
    mono = [
        name
        for j, name in enumerate(d.genotypes.names())
        if len(np.unique(d.genotypes.codes[~d.genotypes.missing_mask[:, j], j])) == 1
    ]
    if mono:
        report.warnings.append("monomorphic SNP columns: " + ", ".join(mono))
    return report


def encode_genotypes(
    raw, missing_marker: str = "NA", snp_names: Sequence[str] = ()
) -> tuple[GenotypeMatrix, list]:
    """Code a categorical call table as -1/0/+1 with a missingness mask.

    Within each column the lexicographically smaller homozygote maps to -1,
    the larger to +1, and the heterozygote (a call whose two characters
    differ) to 0. Returns the coded matrix and a list of warnings
    (monomorphic columns).
    """
    calls = np.asarray(raw, dtype=object)
    if calls.ndim != 2:
        raise DataValidationError("raw genotype table must be 2-d")
    n, s = calls.shape
    names = tuple(snp_names) if snp_names else tuple(f"snp{j + 1}" for j in range(s))
    codes = np.zeros((n, s), dtype=np.int8)
    mask = np.zeros((n, s), dtype=bool)
    categories: list[dict] = []
    warnings: list[str] = []
    for j in range(s):
        col = [str(x).strip() for x in calls[:, j]]
        observed = sorted({x for x in col if x and x != missing_marker})
        if not observed:
            raise DataValidationError(f"SNP column {names[j]!r} has no observed calls")
        if len(observed) > 3:
            raise DataValidationError(
                f"SNP column {names[j]!r} has {len(observed)} categories: "
                + ", ".join(observed)
            )
        homs = [c for c in observed if len(set(c)) == 1]
        hets = [c for c in observed if len(set(c)) > 1]
        if len(hets) > 1:
            raise DataValidationError(
                f"SNP column {names[j]!r} has multiple heterozygous calls: "
                + ", ".join(hets)
            )
        if len(homs) > 2:
            raise DataValidationError(
                f"SNP column {names[j]!r} has {len(homs)} homozygous calls"
            )
        mapping: dict[str, int] = {}
        if homs:
            mapping[max(homs)] = 1
            if len(homs) == 2:
                mapping[min(homs)] = -1
        if hets:
            mapping[hets[0]] = 0
        if len(observed) == 1:
            warnings.append(f"SNP column {names[j]!r} is monomorphic")
        for i, call in enumerate(col):
            if not call or call == missing_marker:
                mask[i, j] = True
            else:
                codes[i, j] = mapping[call]
        categories.append({code: call for call, code in mapping.items()})
    gm = GenotypeMatrix(codes, mask, names, tuple(categories))
    return gm, warnings


_DEFAULT_CALLS = {-1: "AA", 0: "AB", 1: "BB"}


def decode_genotypes(gm: GenotypeMatrix, missing_marker: str = "NA") -> np.ndarray:
    """Categorical call table from a coded matrix (inverse of encode)."""
    n, s = gm.codes.shape
    out = np.empty((n, s), dtype=object)
    for j in range(s):
        cats = gm.categories[j] if gm.categories else _DEFAULT_CALLS
        for i in range(n):
            if gm.missing_mask[i, j]:
                out[i, j] = missing_marker
            else:
                out[i, j] = cats.get(int(gm.codes[i, j]), _DEFAULT_CALLS[int(gm.codes[i, j])])
    return out

"""File formats: pedigree/genotype/phenotype/kinship inputs, sample dumps,
summaries, traces, and the reproducibility manifest.

Every output file starts with the run manifest as '#'-prefixed key=value
lines; every reader skips '#' lines. Floats are written with repr, which
round-trips exactly, so a file can be reloaded bit-identically.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .gibbs import GibbsConfig, PosteriorSamples, autocorrelations, hpd_interval
from .model import (
    Dataset,
    DataValidationError,
    FamilyDesign,
    GenotypeMatrix,
    ImputationPrior,
    PhenotypeVector,
    decode_genotypes,
    encode_genotypes,
    family_design,
)
from .pedigree import (
    PedigreeRecord,
    RelationshipMatrix,
    build_numerator_matrix,
    extract_submatrix,
    order_pedigree,
)
from .simulator import SimTruth

__all__ = [
    "fmt",
    "file_digest",
    "read_table",
    "write_table",
    "read_pedigree",
    "write_pedigree",
    "read_genotype_calls",
    "write_genotypes",
    "read_phenotypes",
    "write_phenotypes",
    "read_families",
    "write_families",
    "read_kinship_matrix",
    "write_kinship_matrix",
    "read_imputation_prior",
    "write_samples",
    "read_samples",
    "write_summary",
    "write_intervals",
    "write_autocorrelations",
    "write_trace",
    "write_best_model",
    "write_truth",
    "read_truth",
    "read_config_file",
    "write_manifest_file",
    "assemble_dataset",
]


def fmt(x) -> str:
    """Round-trip decimal formatting for numeric output."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def file_digest(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Comma-separated file as (header, rows); '#' lines skipped."""
    header: Optional[list[str]] = None
    rows: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                header = cells
            else:
                rows.append(cells)
    if header is None:
        raise DataValidationError(f"{path}: empty file")
    return header, rows


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], manifest_lines=()):
    with open(path, "w", encoding="utf-8") as fh:
        for line in manifest_lines:
            fh.write(line + "\n")
        fh.write(",".join(str(h) for h in header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(c) for c in row) + "\n")


# -- pedigree ----------------------------------------------------------------


def read_pedigree(path) -> list[PedigreeRecord]:
    header, rows = read_table(path)
    if [h.lower() for h in header[:3]] != ["id", "sire", "dam"]:
        raise DataValidationError(f"{path}: expected header id,sire,dam")
    records = []
    for row in rows:
        rid, sire, dam = (row + ["", ""])[:3]
        records.append(PedigreeRecord(rid, sire or None, dam or None))
    return records


def write_pedigree(path, records: Iterable[PedigreeRecord], manifest_lines=()):
    rows = [(r.individual_id, r.sire_id or "", r.dam_id or "") for r in records]
    write_table(path, ["id", "sire", "dam"], rows, manifest_lines)


# -- genotypes / phenotypes / families ---------------------------------------


def read_genotype_calls(path, missing_marker: str = "NA"):
    """Genotype file as (ids, snp_names, calls table)."""
    header, rows = read_table(path)
    if not header or header[0].lower() != "id":
        raise DataValidationError(f"{path}: first genotype column must be 'id'")
    snp_names = header[1:]
    ids = [r[0] for r in rows]
    calls = np.array([r[1:] for r in rows], dtype=object)
    if calls.size and calls.shape[1] != len(snp_names):
        raise DataValidationError(f"{path}: ragged genotype rows")
    return ids, snp_names, calls


def write_genotypes(path, ids, gm: GenotypeMatrix, missing_marker="NA", manifest_lines=()):
    calls = decode_genotypes(gm, missing_marker)
    rows = [[ids[i]] + list(calls[i]) for i in range(len(ids))]
    write_table(path, ["id"] + list(gm.names()), rows, manifest_lines)


def read_phenotypes(path) -> dict[str, float]:
    header, rows = read_table(path)
    if [h.lower() for h in header[:2]] != ["id", "value"]:
        raise DataValidationError(f"{path}: expected header id,value")
    out: dict[str, float] = {}
    for row in rows:
        if row[0] in out:
            raise DataValidationError(f"{path}: duplicate id {row[0]!r}")
        out[row[0]] = float(row[1])
    return out


def write_phenotypes(path, ids, values, manifest_lines=()):
    write_table(path, ["id", "value"], zip(ids, values), manifest_lines)


def read_families(path) -> dict[str, str]:
    header, rows = read_table(path)
    if [h.lower() for h in header[:2]] != ["id", "family"]:
        raise DataValidationError(f"{path}: expected header id,family")
    return {row[0]: row[1] for row in rows}


def write_families(path, ids, families, manifest_lines=()):
    write_table(path, ["id", "family"], zip(ids, families), manifest_lines)


# -- kinship -----------------------------------------------------------------


def read_kinship_matrix(path) -> RelationshipMatrix:
    header, rows = read_table(path)
    ids = header[1:]
    if any(row[0] != ids[k] for k, row in enumerate(rows)):
        raise DataValidationError(f"{path}: kinship row ids must match header order")
    entries = np.array([[float(c) for c in row[1:]] for row in rows])
    return RelationshipMatrix(ids, entries)


def write_kinship_matrix(path, R: RelationshipMatrix, manifest_lines=()):
    rows = [[R.ids[i]] + list(R.entries[i]) for i in range(R.dim)]
    write_table(path, ["id"] + list(R.ids), rows, manifest_lines)


# -- imputation prior ---------------------------------------------------------


def read_imputation_prior(path, ids, snp_names) -> ImputationPrior:
    """Weighted imputation prior from rows id,snp,w_minus1,w_0,w_plus1.

    Cells not listed default to the uniform triple.
    """
    header, rows = read_table(path)
    expected = ["id", "snp", "w_minus1", "w_0", "w_plus1"]
    if [h.lower() for h in header[:5]] != expected:
        raise DataValidationError(f"{path}: expected header {','.join(expected)}")
    id_index = {x: i for i, x in enumerate(ids)}
    snp_index = {x: j for j, x in enumerate(snp_names)}
    weights = np.full((len(ids), len(snp_names), 3), 1.0 / 3.0)
    for row in rows:
        rid, snp = row[0], row[1]
        if rid not in id_index:
            raise DataValidationError(f"{path}: unknown individual id {rid!r}")
        if snp not in snp_index:
            raise DataValidationError(f"{path}: unknown SNP name {snp!r}")
        triple = np.array([float(row[2]), float(row[3]), float(row[4])])
        weights[id_index[rid], snp_index[snp]] = triple
    return ImputationPrior(mode="weighted", weights=weights)


# -- posterior samples ---------------------------------------------------------


def _masked_cell_labels(samples: PosteriorSamples, ids) -> list[str]:
    n, s = samples.missing_mask.shape
    labels = []
    for flat in np.flatnonzero(samples.missing_mask.ravel()):
        i, j = divmod(int(flat), s)
        rid = ids[i] if ids else str(i)
        labels.append(f"zimp_{rid}_{samples.snp_names[j]}")
    return labels


def write_samples(path, samples: PosteriorSamples, ids=(), manifest_lines=()):
    """One row per retained state: coefficients, variances, then the
    imputed genotype codes of every masked cell."""
    names, cols = samples.coefficient_table()
    header = list(names) + _masked_cell_labels(samples, ids)
    body = []
    for i in range(samples.retained_count):
        row = [fmt(v) for v in cols[i]]
        if samples.masked_values.shape[1]:
            row += [str(int(v)) for v in samples.masked_values[i]]
        body.append(row)
    write_table(path, header, body, manifest_lines)


def read_samples(path, data: Dataset, config: Optional[GibbsConfig] = None) -> PosteriorSamples:
    """Rebuild PosteriorSamples from a dump, aligned to the dataset shape."""
    header, rows = read_table(path)
    p = data.X.shape[1]
    sd = data.design_dim
    n_masked = int(data.genotypes.missing_mask.sum())
    expected_cols = p + sd + 2 + n_masked
    if len(header) != expected_cols:
        raise DataValidationError(
            f"{path}: expected {expected_cols} columns for this dataset, got {len(header)}"
        )
    values = np.array([[float(c) for c in row] for row in rows])
    observed = data.genotypes.codes.copy()
    observed[data.genotypes.missing_mask] = 0
    return PosteriorSamples(
        betas=values[:, :p],
        gammas=values[:, p : p + sd],
        sigma2s=values[:, p + sd],
        phi2s=values[:, p + sd + 1],
        masked_values=values[:, p + sd + 2 :].astype(np.int8),
        observed_codes=observed,
        missing_mask=data.genotypes.missing_mask,
        snp_coding=data.snp_coding,
        beta_labels=data.design.names(),
        gamma_labels=data.gamma_labels(),
        snp_names=data.genotypes.names(),
        config=config or GibbsConfig(total_iterations=2, burn_in=1, thinning=1),
    )


def write_summary(path, samples: PosteriorSamples, level=0.95, manifest_lines=()):
    rows = []
    for name, mean, interval in samples.summary(level):
        rows.append(
            (name, mean, interval.lower, interval.upper, not interval.contains_zero)
        )
    write_table(
        path,
        ["name", "mean", "hpd_lower", "hpd_upper", "significant"],
        rows,
        manifest_lines,
    )


def write_intervals(path, samples: PosteriorSamples, level=0.95, manifest_lines=()):
    """Per-SNP-coefficient interval rows (lower / mean / upper)."""
    rows = []
    for k, name in enumerate(samples.gamma_labels):
        draws = samples.gammas[:, k]
        interval = hpd_interval(draws, level)
        rows.append(
            (
                name,
                interval.lower,
                float(draws.mean()),
                interval.upper,
                not interval.contains_zero,
            )
        )
    write_table(
        path,
        ["name", "lower", "mean", "upper", "significant"],
        rows,
        manifest_lines,
    )


def write_autocorrelations(path, samples: PosteriorSamples, max_lag=20, manifest_lines=()):
    names, cols = samples.coefficient_table()
    rows = []
    for k, name in enumerate(names):
        acf = autocorrelations(cols[:, k], max_lag)
        rows.append([name] + list(acf))
    header = ["name"] + [f"lag{k}" for k in range(1, max_lag + 1)]
    write_table(path, header, rows, manifest_lines)


def write_trace(path, trace, manifest_lines=()):
    rows = [
        (it, delta.bitstring(), log_bf, accepted)
        for it, (delta, log_bf, accepted) in enumerate(trace.visited)
    ]
    write_table(path, ["iteration", "delta", "log_bf", "accepted"], rows, manifest_lines)


def write_best_model(path, trace, gamma_labels, manifest_lines=()):
    delta, log_bf = trace.best
    included = [gamma_labels[j] for j in delta.included()]
    with open(path, "w", encoding="utf-8") as fh:
        for line in manifest_lines:
            fh.write(line + "\n")
        fh.write(f"delta={delta.bitstring()}\n")
        fh.write(f"log_bf={fmt(log_bf)}\n")
        fh.write("included=" + ";".join(included) + "\n")


# -- simulation truth ----------------------------------------------------------


def write_truth(path, truth: SimTruth, manifest_lines=()):
    """Key=value truth record; genotype truth rides along as code rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in manifest_lines:
            fh.write(line + "\n")
        fh.write(f"design_name={truth.design_name}\n")
        fh.write(f"seed={truth.seed}\n")
        fh.write("beta_labels=" + ";".join(truth.beta_labels) + "\n")
        fh.write("beta_true=" + ";".join(fmt(b) for b in truth.beta_true) + "\n")
        fh.write("gamma_labels=" + ";".join(truth.gamma_labels) + "\n")
        fh.write("gamma_true=" + ";".join(fmt(g) for g in truth.gamma_true) + "\n")
        fh.write(f"sigma2_true={fmt(truth.sigma2_true)}\n")
        fh.write("snp_names=" + ";".join(truth.snp_names) + "\n")
        fh.write("ids=" + ";".join(truth.ids) + "\n")
        for i in range(truth.true_codes.shape[0]):
            fh.write(
                "codes=" + ";".join(str(int(c)) for c in truth.true_codes[i]) + "\n"
            )


def read_truth(path) -> SimTruth:
    fields: dict[str, str] = {}
    code_rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "codes":
                code_rows.append([int(c) for c in value.split(";")])
            else:
                fields[key] = value
    return SimTruth(
        design_name=fields["design_name"],
        seed=int(fields["seed"]),
        beta_true=tuple(float(x) for x in fields["beta_true"].split(";")),
        gamma_true=tuple(float(x) for x in fields["gamma_true"].split(";")),
        sigma2_true=float(fields["sigma2_true"]),
        true_codes=np.array(code_rows, dtype=np.int8),
        beta_labels=tuple(fields["beta_labels"].split(";")),
        gamma_labels=tuple(fields["gamma_labels"].split(";")),
        snp_names=tuple(fields["snp_names"].split(";")),
        ids=tuple(fields["ids"].split(";")),
    )


# -- config / manifest ----------------------------------------------------------


def read_config_file(path) -> dict[str, str]:
    """Plain key=value settings; '#' lines allowed (a manifest is loadable)."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataValidationError(f"{path}: malformed config line {line!r}")
            out[key.strip()] = value.strip()
    return out


def write_manifest_file(path, manifest: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in manifest.items():
            fh.write(f"{key}={value}\n")


# -- dataset assembly -----------------------------------------------------------


def assemble_dataset(
    genotypes_path,
    phenotypes_path,
    kinship_mode: str = "identity",
    pedigree_path=None,
    kinship_path=None,
    families_path=None,
    snp_coding: str = "signed",
    missing_marker: str = "NA",
) -> tuple[Dataset, list]:
    """Load and align the input files into a Dataset.

    Row order follows the genotype file. The covariate design comes from
    the families file when given, else from pedigree parent pairs, else a
    plain intercept. Kinship: 'pedigree' builds the numerator matrix and
    extracts the genotyped ids, 'file' loads a matrix, 'identity' uses I.
    Returns the dataset and accumulated warnings.
    """
    ids, snp_names, calls = read_genotype_calls(genotypes_path, missing_marker)
    genotypes, warnings = encode_genotypes(calls, missing_marker, snp_names)
    phen = read_phenotypes(phenotypes_path)
    missing_ids = [i for i in ids if i not in phen]
    if missing_ids:
        raise DataValidationError(
            "phenotype file lacks ids: " + ", ".join(missing_ids[:5])
        )
    y = PhenotypeVector(np.array([phen[i] for i in ids]))

    pedigree_records = read_pedigree(pedigree_path) if pedigree_path else None

    if families_path:
        fam = read_families(families_path)
        absent = [i for i in ids if i not in fam]
        if absent:
            raise DataValidationError(
                "families file lacks ids: " + ", ".join(absent[:5])
            )
        design = family_design([fam[i] for i in ids])
    elif pedigree_records is not None:
        parents = {
            r.individual_id: (r.sire_id or "", r.dam_id or "") for r in pedigree_records
        }
        labels = []
        for i in ids:
            if i not in parents:
                raise DataValidationError(f"pedigree lacks genotyped id {i!r}")
            sire, dam = parents[i]
            labels.append(f"{sire}x{dam}" if (sire or dam) else "base")
        design = family_design(labels)
    else:
        design = FamilyDesign(np.ones((len(ids), 1)), ("intercept",))

    if kinship_mode == "pedigree":
        if pedigree_records is None:
            raise DataValidationError("kinship mode 'pedigree' requires --pedigree")
        R = extract_submatrix(
            build_numerator_matrix(order_pedigree(pedigree_records)), ids
        )
    elif kinship_mode == "file":
        if not kinship_path:
            raise DataValidationError("kinship mode 'file' requires --kinship-file")
        full = read_kinship_matrix(kinship_path)
        R = extract_submatrix(full, ids) if list(full.ids) != list(ids) else full
    elif kinship_mode == "identity":
        R = RelationshipMatrix.identity(ids)
    else:
        raise DataValidationError(f"unknown kinship mode {kinship_mode!r}")

    data = Dataset(
        genotypes=genotypes,
        phenotypes=y,
        design=design,
        kinship=R,
        snp_coding=snp_coding,
        ids=tuple(ids),
    )
    return data, warnings

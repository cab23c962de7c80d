from pathlib import Path

import numpy as np

from snpgibbs.cli import main


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def simulate_inputs(tmp_path, missing="0.1", preset="six-family", seed="1"):
    out = tmp_path / "sim"
    code = run_cli(
        "simulate", "--preset", preset, "--missing", missing, "--seed", seed,
        "--out-dir", out,
    )
    assert code == 0
    return out


def read_noncomment_lines(path):
    return [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]


class TestSimulateCommand:
    def test_emits_expected_files(self, tmp_path):
        out = simulate_inputs(tmp_path)
        for name in ("genotypes.csv", "phenotypes.csv", "families.csv",
                     "pedigree.csv", "truth.txt", "manifest.txt"):
            assert (out / name).exists()

    def test_identity_design_emits_kinship_file(self, tmp_path):
        out = tmp_path / "sim"
        assert run_cli("simulate", "--preset", "five-signal", "--out-dir", out) == 0
        assert not (out / "pedigree.csv").exists()

    def test_equicorrelated_emits_matrix(self, tmp_path):
        out = tmp_path / "sim"
        assert run_cli("simulate", "--preset", "equicorrelated", "--out-dir", out) == 0
        assert (out / "kinship.csv").exists()

    def test_manifest_replay_bitwise(self, tmp_path):
        s1, s2 = tmp_path / "s1", tmp_path / "s2"
        assert run_cli(
            "simulate", "--preset", "six-family", "--missing", "0.1",
            "--seed", "3", "--mask-seed", "9", "--out-dir", s1,
        ) == 0
        assert run_cli("simulate", "--config", s1 / "manifest.txt", "--out-dir", s2) == 0
        for f in ("genotypes.csv", "phenotypes.csv", "truth.txt"):
            assert (s1 / f).read_bytes() == (s2 / f).read_bytes()


class TestRunCommand:
    def test_run_pipeline_and_summary_shape(self, tmp_path):
        sim = simulate_inputs(tmp_path)
        out = tmp_path / "run"
        code = run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--pedigree", sim / "pedigree.csv",
            "--families", sim / "families.csv",
            "--kinship", "pedigree", "--coding", "additive_dominance",
            "--iters", "300", "--burnin", "100", "--thin", "2", "--seed", "9",
            "--out-dir", out,
        )
        assert code == 0
        rows = read_noncomment_lines(out / "summary.csv")
        # header + p + s_design + 2 parameter rows
        assert len(rows) == 1 + 6 + 10 + 2
        intervals = read_noncomment_lines(out / "intervals.csv")
        assert len(intervals) == 1 + 10
        assert (out / "samples.csv").exists()
        assert (out / "autocorr.csv").exists()

    def test_retained_count_contract(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0")
        out = tmp_path / "run"
        code = run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--kinship", "identity",
            "--iters", "500", "--burnin", "100", "--thin", "4", "--seed", "2",
            "--out-dir", out,
        )
        assert code == 0
        samples = read_noncomment_lines(out / "samples.csv")
        assert len(samples) - 1 == (500 - 100) // 4

    def test_identity_kinship_without_pedigree(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0")
        out = tmp_path / "run"
        code = run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--kinship", "identity", "--iters", "150", "--burnin", "10",
            "--thin", "1", "--out-dir", out,
        )
        assert code == 0

    def test_multi_chain_outputs(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0")
        out = tmp_path / "run"
        code = run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--kinship", "identity", "--chains", "2",
            "--iters", "260", "--burnin", "20", "--thin", "2", "--out-dir", out,
        )
        assert code == 0
        assert (out / "samples_chain1.csv").exists()
        assert (out / "samples_chain2.csv").exists()

    def test_missing_required_inputs_exit_3(self, tmp_path):
        assert run_cli("run", "--out-dir", tmp_path / "x") == 3

    def test_nonexistent_file_exit_3(self, tmp_path):
        code = run_cli(
            "run", "--genotypes", tmp_path / "nope.csv",
            "--phenotypes", tmp_path / "nope2.csv", "--out-dir", tmp_path / "x",
        )
        assert code == 3

    def test_usage_error_exit_2(self):
        assert run_cli("run", "--not-a-flag") == 2
        assert run_cli() == 2

    def test_non_pd_kinship_file_exit_3(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0")
        kin = tmp_path / "bad_kin.csv"
        ids = read_noncomment_lines(sim / "genotypes.csv")[1:]
        ids = [r.split(",")[0] for r in ids]
        n = len(ids)
        entries = np.full((n, n), 1.2)
        np.fill_diagonal(entries, 1.0)  # symmetric, diag in bounds, not PD
        lines = ["id," + ",".join(ids)]
        for i in range(n):
            lines.append(ids[i] + "," + ",".join(repr(x) for x in entries[i]))
        kin.write_text("\n".join(lines) + "\n")
        code = run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--kinship", "file", "--kinship-file", kin,
            "--iters", "120", "--burnin", "10", "--thin", "1",
            "--out-dir", tmp_path / "x",
        )
        assert code == 3

    def test_numerical_failure_exit_4(self, tmp_path):
        # a SNP column of all heterozygotes is a zero design column, so every
        # Bayes-factor term for models excluding it has a singular Gram matrix
        n = 12
        rng = np.random.default_rng(0)
        gt = ["id,snp1,snp2"]
        for i in range(n):
            a = rng.choice(["GG", "GC", "CC"])
            gt.append(f"i{i},{a},GC")
        (tmp_path / "g.csv").write_text("\n".join(gt) + "\n")
        (tmp_path / "p.csv").write_text(
            "id,value\n" + "\n".join(f"i{i},{rng.normal():.6f}" for i in range(n)) + "\n"
        )
        code = run_cli(
            "select", "--genotypes", tmp_path / "g.csv",
            "--phenotypes", tmp_path / "p.csv", "--kinship", "identity",
            "--iters", "300", "--burnin", "100", "--thin", "1", "--seed", "1",
            "--candidates", "0", "--exhaustive", "--min-samples-per-bf", "100",
            "--out-dir", tmp_path / "sel",
        )
        assert code == 4

    def test_reproducibility_same_command_bitwise(self, tmp_path):
        sim = simulate_inputs(tmp_path)
        args = [
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--kinship", "identity", "--coding", "additive_dominance",
            "--iters", "340", "--burnin", "100", "--thin", "2", "--seed", "11",
        ]
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run_cli(*args, "--out-dir", out1) == 0
        assert run_cli(*args, "--out-dir", out2) == 0
        for name in ("samples.csv", "summary.csv", "intervals.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_reproduce_from_manifest(self, tmp_path):
        sim = simulate_inputs(tmp_path)
        out1 = tmp_path / "r1"
        assert run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--kinship", "identity", "--coding", "additive_dominance",
            "--iters", "300", "--burnin", "50", "--thin", "2", "--seed", "13",
            "--out-dir", out1,
        ) == 0
        out2 = tmp_path / "r2"
        assert run_cli(
            "run", "--config", out1 / "manifest.txt", "--out-dir", out2
        ) == 0
        assert (out1 / "samples.csv").read_bytes() == (out2 / "samples.csv").read_bytes()

    def test_outputs_start_with_manifest(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0")
        out = tmp_path / "run"
        run_cli(
            "run", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv", "--kinship", "identity",
            "--iters", "120", "--burnin", "10", "--thin", "1", "--out-dir", out,
        )
        for name in ("samples.csv", "summary.csv", "intervals.csv", "autocorr.csv"):
            first = (out / name).read_text().splitlines()[0]
            assert first.startswith("# version=")


class TestSelectCommand:
    def _run_and_select(self, tmp_path, extra=()):
        sim = simulate_inputs(tmp_path, missing="0.1", preset="five-signal", seed="3")
        base = [
            "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--kinship", "identity",
            "--iters", "1500", "--burnin", "500", "--thin", "1", "--seed", "21",
        ]
        run_out = tmp_path / "run"
        assert run_cli("run", *base, "--out-dir", run_out) == 0
        sel_out = tmp_path / "sel"
        code = run_cli(
            "select", *base, "--search-iters", "200",
            "--min-samples-per-bf", "1000", "--out-dir", sel_out, *extra,
        )
        return code, run_out, sel_out, base

    def test_live_select_writes_trace_and_best(self, tmp_path):
        code, _, sel_out, _ = self._run_and_select(tmp_path)
        assert code == 0
        trace = read_noncomment_lines(sel_out / "trace.csv")
        assert len(trace) > 1
        best = (sel_out / "best_model.txt").read_text()
        assert "delta=" in best and "log_bf=" in best

    def test_recorded_equals_live(self, tmp_path):
        code, run_out, sel_live, base = self._run_and_select(tmp_path)
        assert code == 0
        sel_rec = tmp_path / "sel_rec"
        code = run_cli(
            "select", *base, "--samples", run_out / "samples.csv",
            "--search-iters", "200", "--min-samples-per-bf", "1000",
            "--out-dir", sel_rec,
        )
        assert code == 0
        live_best = read_noncomment_lines(sel_live / "best_model.txt")
        rec_best = read_noncomment_lines(sel_rec / "best_model.txt")
        assert live_best == rec_best

    def test_exhaustive_sixteen_rows(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0", preset="five-signal", seed="4")
        out = tmp_path / "sel"
        code = run_cli(
            "select",
            "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--kinship", "identity",
            "--iters", "800", "--burnin", "300", "--thin", "1", "--seed", "5",
            "--candidates", "0,1,2,3", "--exhaustive",
            "--min-samples-per-bf", "500", "--out-dir", out,
        )
        assert code == 0
        trace = read_noncomment_lines(out / "trace.csv")
        assert len(trace) == 1 + 16

    def test_mixture_prob_one_hamming_moves(self, tmp_path):
        code, run_out, _, base = self._run_and_select(tmp_path)
        out = tmp_path / "sel_h1"
        assert run_cli(
            "select", *base, "--samples", run_out / "samples.csv",
            "--mixture-prob", "1.0", "--search-iters", "120",
            "--min-samples-per-bf", "500", "--candidates", "0,1,2,3,4",
            "--out-dir", out,
        ) == 0
        rows = [r.split(",") for r in read_noncomment_lines(out / "trace.csv")[1:]]
        incumbent = rows[0][1]
        for _, delta, _, accepted in rows[1:]:
            hamming = sum(a != b for a, b in zip(delta, incumbent))
            assert hamming == 1  # pure-flip proposals
            if accepted == "1":
                incumbent = delta

    def test_too_many_exhaustive_candidates_exit_3(self, tmp_path):
        code, run_out, _, base = self._run_and_select(tmp_path)
        out = tmp_path / "sel_big"
        code = run_cli(
            "select", *base, "--samples", run_out / "samples.csv",
            "--candidates", ",".join(str(k) for k in range(21)),
            "--exhaustive", "--out-dir", out,
        )
        assert code == 3


class TestKinshipCommand:
    def test_three_record_pedigree(self, tmp_path):
        ped = tmp_path / "ped.csv"
        ped.write_text("id,sire,dam\nA,,\nB,,\nC,A,B\n")
        out = tmp_path / "kin"
        assert run_cli("kinship", "--pedigree", ped, "--out-dir", out) == 0
        rows = read_noncomment_lines(out / "kinship.csv")
        assert len(rows) == 4  # header + 3
        assert rows[0] == "id,A,B,C"

    def test_submatrix_extraction(self, tmp_path):
        ped = tmp_path / "ped.csv"
        ped.write_text("id,sire,dam\nA,,\nB,,\nC,A,B\nD,A,B\n")
        out = tmp_path / "kin"
        assert run_cli("kinship", "--pedigree", ped, "--ids", "C,D", "--out-dir", out) == 0
        rows = read_noncomment_lines(out / "kinship.csv")
        assert rows[0] == "id,C,D"
        assert float(rows[1].split(",")[2]) == 0.5

    def test_cycle_exit_3(self, tmp_path):
        ped = tmp_path / "ped.csv"
        ped.write_text("id,sire,dam\nA,B,\nB,A,\n")
        assert run_cli("kinship", "--pedigree", ped, "--out-dir", tmp_path / "k") == 3


class TestEmCommand:
    def test_complete_data_one_step_convergence(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0")
        out = tmp_path / "em"
        code = run_cli(
            "em", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--coding", "additive_dominance", "--out-dir", out,
        )
        assert code == 0
        log_rows = read_noncomment_lines(out / "em_log.csv")
        # complete data: the first M-step lands on least squares, the second
        # records a zero delta and stops
        assert len(log_rows) == 1 + 2
        estimates = read_noncomment_lines(out / "em_estimates.csv")
        assert len(estimates) == 1 + 6 + 10 + 1

    def test_with_missing_data(self, tmp_path):
        sim = simulate_inputs(tmp_path, missing="0.05", seed="7")
        out = tmp_path / "em"
        code = run_cli(
            "em", "--genotypes", sim / "genotypes.csv",
            "--phenotypes", sim / "phenotypes.csv",
            "--families", sim / "families.csv",
            "--coding", "additive_dominance", "--max-iter", "100",
            "--out-dir", out,
        )
        assert code == 0


class TestBenchCommand:
    def test_bench_writes_rows(self, tmp_path):
        out = tmp_path / "bench"
        code = run_cli(
            "bench", "--sizes", "16,32", "--bench-n", "24", "--bench-iters", "4",
            "--out-dir", out,
        )
        assert code == 0
        rows = read_noncomment_lines(out / "bench.csv")
        assert len(rows) == 1 + 2

    def test_update_path_beats_dense_at_256(self):
        # machine-dependent timing: assert ordering only, not magnitude
        from snpgibbs.linalg import benchmark_column_update

        rows = benchmark_column_update([256], n=128, iters=10, seed=1)
        dim, t_update, t_dense = rows[0]
        assert dim == 256
        assert t_update < t_dense

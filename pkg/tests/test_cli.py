import json
import math
import os

import numpy as np
import pytest
from click.testing import CliRunner

from banditfit import BanditSpec
from banditfit.cli import main
from banditfit.formats import dumps, episode_to_doc, params_to_doc, read_doc
from conftest import raw_simulate
from make_goldens import BENCH, FIT, FIT_DIRECT, HERE, SIMULATE


def invoke(args, **kw):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False, **kw)


def golden(name):
    with open(os.path.join(HERE, name)) as fh:
        return fh.read()


@pytest.fixture
def episode_file(tmp_path):
    path = tmp_path / "ep.json"
    path.write_text(invoke(SIMULATE).output)
    return path


def test_simulate_is_byte_reproducible():
    a, b = invoke(SIMULATE), invoke(SIMULATE)
    assert a.exit_code == 0 and a.output == b.output
    assert a.output == golden("episode_seed7.json")


def test_simulate_rejects_single_arm():
    assert invoke(["simulate", "--arms", "1"]).exit_code == 2


def test_simulate_two_signal_scheme():
    doc = json.loads(invoke(["simulate", "--scheme", "reward+action", "--trials", "20"]).output)
    assert doc["k"] == 2 and len(doc["signals"]) == 2
    assert doc["sidecar"]["true_params"]["format"] == "banditfit.params"


def test_simulate_many_needs_out_dir(tmp_path):
    assert invoke(["simulate", "--episodes", "3"]).exit_code == 2
    res = invoke(["simulate", "--episodes", "3", "--trials", "10", "--out-dir", tmp_path])
    assert res.exit_code == 0
    assert sorted(os.listdir(tmp_path)) == [f"episode_{i:04d}.json" for i in range(3)]


def test_fit_matches_golden():
    path = os.path.join(HERE, "episode_seed7.json")
    assert invoke(FIT + [path]).output == golden("fit_seed7.json")
    assert invoke(FIT_DIRECT + [path]).output == golden("fit_direct_seed7.json")


def test_fit_reads_stdin(episode_file):
    via_file = invoke(["fit", episode_file]).output
    via_stdin = invoke(["fit", "-"], input=episode_file.read_text()).output
    assert via_file == via_stdin


def test_fit_truncated_flag(episode_file):
    doc = json.loads(invoke(["fit", episode_file, "--lag-depth", 5]).output)
    assert doc["report"]["lb_truncated"] is True
    assert doc["report"]["certificate"]["global_optimal"] is False
    assert doc["options"]["p"] == 5


def test_fit_direct_restart_diagnostics(episode_file):
    doc = json.loads(invoke(["fit", episode_file, "--method", "direct", "--restarts", 10]).output)
    assert len(doc["report"]["diagnostics"]["restarts"]) == 10


def test_fit_certified_constructed_file(tmp_path):
    for seed in range(50):
        ep = raw_simulate(0.7, -3.0, 60, (0.6, 0.5), np.random.default_rng(seed))
        path = tmp_path / f"c{seed}.json"
        path.write_text(dumps(episode_to_doc(ep, BanditSpec(2))))
        doc = json.loads(invoke(["fit", path, "--tie-arms"]).output)
        if doc["report"]["certificate"]["global_optimal"]:
            assert doc["report"]["gap"] <= 1e-4
            return
    pytest.fail("no certified constructed file")


def test_fit_parse_error_names_field(tmp_path, episode_file):
    doc = read_doc(str(episode_file))
    doc["actions"] = "oops"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    res = invoke(["fit", bad])
    assert res.exit_code == 2
    assert "'actions'" in res.output


def test_fit_not_converged_exit_code(episode_file, tmp_path):
    out = tmp_path / "r.json"
    res = invoke(["fit", episode_file, "--max-iters", 2, "-o", out])
    assert res.exit_code == 3
    assert json.loads(out.read_text())["report"]["converged"] is False


def test_logspace_recovery_flag(episode_file):
    doc = json.loads(invoke(["fit", episode_file, "--logspace-recovery"]).output)
    assert doc["report"]["method"] == "logspace"


def test_bound_audit_of_direct_fit(tmp_path, episode_file):
    direct = tmp_path / "direct.json"
    invoke(["fit", episode_file, "--method", "direct", "-o", direct])
    doc = json.loads(invoke(["bound", episode_file, "--audit", direct]).output)
    assert doc["report"]["audit"]["gap"] >= 0


def test_bound_on_random_choice_data(tmp_path):
    res = invoke(["simulate", "--trials", 80, "--alpha-range", 0, 0, "--seed", 2])
    path = tmp_path / "a0.json"
    path.write_text(res.output)
    doc = json.loads(invoke(["bound", path]).output)
    assert doc["report"]["J_lb"] <= 80 * math.log(2) + 1e-8


def test_bound_missing_audit_file(episode_file):
    assert invoke(["bound", episode_file, "--audit", "no-such-file.json"]).exit_code == 2


def test_bound_accepts_params_file(tmp_path, episode_file):
    from banditfit import Params

    p = tmp_path / "p.json"
    p.write_text(dumps(params_to_doc(Params.shared(0.3, 1.0, 2))))
    assert invoke(["bound", episode_file, "--audit", p]).exit_code == 0


def test_bench_golden_and_shape(tmp_path):
    res = invoke(BENCH + ["--out-dir", tmp_path])
    assert res.exit_code == 0
    text = (tmp_path / "summary.tsv").read_text()
    assert text == golden("bench_summary.tsv")
    rows = text.strip().split("\n")
    assert len(rows) == 1 + 4
    reports = os.listdir(tmp_path / "reports")
    assert len(reports) == 4 * 3


def test_bench_smoke_gaps_nonnegative(tmp_path):
    res = invoke(["bench", "--episodes", 10, "--trials", 50, "--methods", "sequential",
                  "--restarts", 3, "--out-dir", tmp_path])
    assert res.exit_code == 0
    lines = (tmp_path / "summary.tsv").read_text().strip().split("\n")
    header = lines[0].split("\t")
    gaps = [float(r.split("\t")[header.index("sequential_gap")]) for r in lines[1:]]
    assert len(gaps) == 10 and min(gaps) >= 0


def test_bench_rejects_unknown_method(tmp_path):
    assert invoke(["bench", "--methods", "magic", "--out-dir", tmp_path]).exit_code == 2


def test_bench_partial_failure_exit_code(tmp_path, monkeypatch):
    import banditfit.cli as cli
    from banditfit.sim import BenchResult

    def failing(config):
        recs = [{"episode": i, "fit_seed": 0, "status": "error", "error": "boom", "true_ll": -1.0}
                for i in range(config.episodes)]
        return BenchResult(config, recs, {}, [], [], {"episodes": config.episodes, "succeeded": 0,
                                                        "methods": {}})

    monkeypatch.setattr(cli, "run_benchmark", failing)
    res = invoke(["bench", "--episodes", 3, "--out-dir", tmp_path])
    assert res.exit_code == 4
    assert len((tmp_path / "summary.tsv").read_text().strip().split("\n")) == 4

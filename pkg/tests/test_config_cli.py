import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from richards_mlmc import cli
from richards_mlmc.config import (
    CampaignConfig,
    ConfigError,
    defaults,
    env_overrides,
    parse_config,
    parse_config_text,
)
from richards_mlmc.randfield import PHI1, PHI2

SMALL_SOLVE = "[problem]\ncells = 16\n[soil]\nrandom = false\n"
SMALL_MLMC = """\
[problem]
cells = 16
t_final = 0.05
[mlmc]
coarsest = 8
std_coarsest = 8
eps = 0.05
warmup_base = 4
warmup_min = 3
"""


def run_cli(tmp_path, command, text, *extra, environ=None):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg = tmp_path / "campaign.ini"
    cfg.write_text(text)
    out = tmp_path / "out"
    argv = [command, "--config", str(cfg), "--out", str(out), "--threads", "1", *extra]
    return cli.main(argv, environ or {}), out


# -- parsing ----------------------------------------------------------------

def test_empty_config_gives_defaults():
    cfg = parse_config_text("")
    assert cfg.values == defaults()
    assert cfg.matern() == PHI1
    opts = cfg.solver_options()
    assert opts.eps_pi == opts.eps_mg == 1e-5
    assert cfg.soil().n_pc == 6


def test_empty_file(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    assert parse_config(path).values == defaults()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "nope.ini")


def test_n_below_one_is_rejected():
    with pytest.raises(ConfigError, match="n must exceed 1"):
        parse_config_text("[soil]\nn = 0.9\n")


def test_phi2_preset():
    cfg = parse_config_text("[field]\npreset = phi2\n")
    assert cfg.matern() == PHI2
    assert cfg.matern().as_tuple() == (0.5, 0.1, 0.01, 1.0)


def test_explicit_matern_entries_override_preset():
    cfg = parse_config_text("[field]\npreset = phi2\nlambda_z = 0.05\n")
    assert cfg.matern().as_tuple() == (0.5, 0.1, 0.05, 1.0)


def test_unknown_key_points_at_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[run]\nseed = 1\n\n[soil]\n  bogus = 3\n")
    assert (exc.value.line, exc.value.column) == (5, 3)
    assert "bogus" in str(exc.value)


def test_unknown_section():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[run]\nseed = 1\n[extras]\nx = 1\n")
    assert exc.value.line == 3


def test_bad_value_points_at_value():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[solver]\nmax_nl = lots\n")
    assert (exc.value.line, exc.value.column) == (2, 10)


def test_fractions_lists_and_level_overrides():
    cfg = parse_config_text("[costmap]\ndt = 1/64\nalphas = 0.2, 2.0 4.0\n"
                            "[mlmc]\ntheta = 0:2.9/1.65, 1:2.95/1.55\n")
    assert cfg["costmap"]["dt"] == 1 / 64
    assert cfg["costmap"]["alphas"] == (0.2, 2.0, 4.0)
    levels = cfg.pc_levels()
    assert (levels[0].alpha, levels[0].n) == (2.9, 1.65)
    assert (levels[1].alpha, levels[1].n) == (2.95, 1.55)
    assert (levels[2].alpha, levels[2].n) == (1.0, 2.0)


def test_level_hierarchies():
    cfg = parse_config_text("[soil]\nalpha = 3.0\nn = 1.45\n")
    pc = cfg.pc_levels()
    assert [s.M for s in pc] == [16, 32, 64]
    assert [s.alpha for s in pc] == pytest.approx([2.9, 2.95, 3.0])
    assert [s.n for s in pc] == pytest.approx([1.65, 1.55, 1.45])
    std = cfg.std_levels()
    assert [s.M for s in std] == [32, 64]
    assert {(s.alpha, s.n) for s in std} == {(3.0, 1.45)}


def test_hierarchy_mismatch_only_matters_for_estimators():
    text = "[problem]\ncells = 16\n"
    parse_config_text(text, "solve")
    with pytest.raises(ConfigError, match="power of two"):
        parse_config_text(text, "mlmc")


@given(st.integers(0, 2**32), st.sampled_from(["1", "4"]), st.text("abc", min_size=1, max_size=5))
def test_digest_ignores_threads_and_out(seed, threads, out):
    a = CampaignConfig().override("run", "seed", str(seed))
    b = CampaignConfig().override("run", "seed", str(seed))
    b.override("run", "threads", threads).override("run", "out", out)
    assert a.digest() == b.digest()
    assert a.digest() != CampaignConfig().override("run", "seed", str(seed + 1)).digest()


def test_env_overrides():
    env = {"RICHARDS_MLMC_SEED": "7", "RICHARDS_MLMC_THREADS": "", "OTHER": "x"}
    assert env_overrides(env) == {"seed": "7"}


# -- command line ------------------------------------------------------------

def test_solve_writes_one_csv_and_one_json(tmp_path):
    status, out = run_cli(tmp_path, "solve", SMALL_SOLVE)
    assert status == cli.EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    data = [n for n in names if not n.endswith("manifest.json")]
    assert len(data) == 2
    assert data[0].startswith("solve-") and data[0].endswith("-pressure.csv")
    assert data[1].endswith("-stats.json")
    rows = list(csv.reader(open(out / data[0])))
    assert rows[0] == ["i", "j", "x", "z", "value"]
    assert len(rows) == 1 + 16 * 16
    stats = json.loads((out / data[1]).read_text())
    assert stats["failed"] is False and stats["w_cycles"] > 0
    manifest = json.loads((out / names[0]).read_text())
    assert manifest["exit_status"] == 0
    assert manifest["config"]["run"]["threads"] == 1
    assert set(manifest["versions"]) >= {"numpy", "scipy", "python"}


def test_costmap_one_by_one_has_one_row(tmp_path):
    text = "[costmap]\nalphas = 1.0\nns = 2.0\nreps = 2\ncells = 16\ndt = 1/32\n"
    status, out = run_cli(tmp_path, "costmap", text)
    assert status == cli.EXIT_OK
    (path,) = out.glob("costmap-*[0-9a-f].csv")
    rows = list(csv.reader(open(path)))
    assert len(rows) == 2


def test_config_error_exit_code(tmp_path, capsys):
    status, _ = run_cli(tmp_path, "solve", "[soil]\nn = 0.9\n")
    assert status == cli.EXIT_CONFIG
    assert "n must exceed 1" in capsys.readouterr().err


def test_bad_set_override(tmp_path):
    status, _ = run_cli(tmp_path, "solve", SMALL_SOLVE, "--set", "soil.nonsense=1")
    assert status == cli.EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path):
    status, out = run_cli(tmp_path, "solve", SMALL_SOLVE + "[solver]\nmax_nl = 1\n")
    assert status == cli.EXIT_SOLVER
    (manifest,) = out.glob("*manifest.json")
    assert json.loads(manifest.read_text())["exit_status"] == cli.EXIT_SOLVER


def test_embedding_failure_exit_code(tmp_path):
    text = "[problem]\ncells = 16\n[field]\nnu = 2.5\nlambda_x = 5\nlambda_z = 5\n"
    status, _ = run_cli(tmp_path, "fields", text)
    assert status == cli.EXIT_EMBEDDING


def test_flag_beats_environment_beats_file(tmp_path):
    text = SMALL_SOLVE + "[run]\nseed = 1\n"
    _, out = run_cli(tmp_path, "fields", text, environ={"RICHARDS_MLMC_SEED": "2"})
    (m,) = out.glob("*manifest.json")
    assert json.loads(m.read_text())["seed"] == 2
    _, out = run_cli(tmp_path, "fields", text, "--seed", "3",
                     environ={"RICHARDS_MLMC_SEED": "2"})
    seeds = {json.loads(m.read_text())["seed"] for m in out.glob("*manifest.json")}
    assert seeds == {2, 3}


def test_set_override_changes_config_hash(tmp_path):
    _, out = run_cli(tmp_path, "solve", SMALL_SOLVE)
    _, out = run_cli(tmp_path, "solve", SMALL_SOLVE, "--set", "problem.t_final=0.05")
    assert len(list(out.glob("*manifest.json"))) == 2


def _telemetry(out, command):
    return {p.name: p.read_bytes() for p in out.glob(f"{command}-*.json")
            if not p.name.endswith("manifest.json")}


@pytest.mark.parametrize("command", ["solve", "fields", "mc", "pcmlmc"])
def test_rerun_is_byte_identical(tmp_path, command):
    text = SMALL_MLMC if command in ("mc", "pcmlmc") else SMALL_SOLVE
    _, out1 = run_cli(tmp_path / "a", command, text)
    _, out2 = run_cli(tmp_path / "b", command, text, "--threads", "2")
    first, second = _telemetry(out1, command), _telemetry(out2, command)
    assert first and first == second

import numpy as np
import pytest

from paretotsp import evaluation as ev
from paretotsp.cli import CKPT_ROOT_ENV, main, parse_config_file
from paretotsp.decomposition import (MANIFEST_NAME, RunConfig,
                                     checkpoint_name, write_manifest)
from paretotsp.errors import ParseError
from paretotsp.instances import Tour, evaluate_objectives, load_native

TINY_CONFIG = """\
# tiny smoke-test run
d_h = 8
n_heads = 2
d_ff = 16
n_nodes = 4
batch_size = 4
dataset_size = 8
m_sub = 2
epochs_first = 1
epochs_rest = 1
seed = 3
"""

TSPLIB_A = """\
NAME: ta
TYPE: TSP
COMMENT: first coordinate set
DIMENSION: 3
EDGE_WEIGHT_TYPE: EUC_2D
NODE_COORD_SECTION
1 0.0 0.0
2 30.0 40.0
3 60.0 0.0
EOF
"""

TSPLIB_B = """\
NAME: tb
TYPE: TSP
DIMENSION: 3
EDGE_WEIGHT_TYPE: EUC_2D
NODE_COORD_SECTION
1 10.0 10.0
2 20.0 10.0
3 20.0 50.0
EOF
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.conf"
    config.write_text(TINY_CONFIG)
    ckpt = root / "ckpt"
    assert main(["train", "--config", str(config), "--out", str(ckpt)]) == 0
    return {"root": root, "config": config, "ckpt": ckpt}


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_file(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("# comment\n\na = 1\nb = two words\n")
    assert parse_config_file(path) == {"a": "1", "b": "two words"}


@pytest.mark.parametrize("text,line", [
    ("a = 1\na = 2\n", 2),
    ("just words\n", 1),
    ("= 3\n", 1),
])
def test_parse_config_rejections(tmp_path, text, line):
    path = tmp_path / "c.conf"
    path.write_text(text)
    with pytest.raises(ParseError) as err:
        parse_config_file(path)
    assert err.value.line_no == line


def test_parse_config_accepts_manifest(tmp_path):
    cfg = RunConfig(d_h=8, n_heads=2, d_ff=16, n_nodes=4, batch_size=4,
                    dataset_size=8, m_sub=2, seed=3)
    write_manifest(tmp_path, cfg, [])
    mapping = parse_config_file(tmp_path / MANIFEST_NAME)
    assert RunConfig.from_mapping(mapping) == cfg


def test_parse_config_rejects_json_without_config(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ParseError):
        parse_config_file(path)


# ---------------------------------------------------------------------------
# gen


def test_gen_writes_deterministic_instances(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["gen", "--n", "6", "--count", "3", "--seed", "7",
                     "--out", str(out)]) == 0
    files = sorted(p.name for p in a.glob("*.motsp"))
    assert files == [f"rand_n6_s7_{k}.motsp" for k in range(3)]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    inst = load_native(a / files[0])
    assert inst.n == 6 and inst.d_x == 4
    assert "wrote 3 instance file(s)" in capsys.readouterr().out


def test_gen_rejects_tiny_n(tmp_path, capsys):
    assert main(["gen", "--n", "1", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train


def test_train_produces_checkpoints(trained, capsys):
    ckpt = trained["ckpt"]
    assert (ckpt / MANIFEST_NAME).exists()
    assert (ckpt / checkpoint_name(1)).exists()
    assert (ckpt / checkpoint_name(2)).exists()


def test_train_progress_lines(tmp_path, capsys):
    config = tmp_path / "run.conf"
    config.write_text(TINY_CONFIG)
    assert main(["train", "--config", str(config), "--out", str(tmp_path / "w")]) == 0
    out = capsys.readouterr().out
    assert "subproblem 1/2  weights=(0.0000, 1.0000)" in out
    assert "subproblem 2/2  weights=(1.0000, 0.0000)" in out
    assert "trained 2 subproblem(s)" in out


def test_train_manifest_rerun_is_bitwise_identical(trained, tmp_path):
    manifest = trained["ckpt"] / MANIFEST_NAME
    redo = tmp_path / "redo"
    assert main(["train", "--config", str(manifest), "--out", str(redo)]) == 0
    for i in (1, 2):
        assert (redo / checkpoint_name(i)).read_bytes() == \
            (trained["ckpt"] / checkpoint_name(i)).read_bytes()


def test_train_workers_note(tmp_path, capsys):
    config = tmp_path / "run.conf"
    config.write_text(TINY_CONFIG)
    assert main(["train", "--config", str(config), "--out", str(tmp_path / "w"),
                 "--workers", "4"]) == 0
    assert "single-worker" in capsys.readouterr().err


def test_train_workdir_from_environment(tmp_path, monkeypatch, capsys):
    config = tmp_path / "run.conf"
    config.write_text(TINY_CONFIG)
    monkeypatch.setenv(CKPT_ROOT_ENV, str(tmp_path / "envdir"))
    assert main(["train", "--config", str(config)]) == 0
    assert (tmp_path / "envdir" / MANIFEST_NAME).exists()

    monkeypatch.delenv(CKPT_ROOT_ENV)
    assert main(["train", "--config", str(config)]) == 2
    assert CKPT_ROOT_ENV in capsys.readouterr().err


def test_train_missing_config_is_io_error(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.conf"),
                 "--out", str(tmp_path)]) == 1
    assert "i/o error" in capsys.readouterr().err


def test_train_unknown_config_key(tmp_path, capsys):
    config = tmp_path / "run.conf"
    config.write_text(TINY_CONFIG + "momentum = 0.9\n")
    assert main(["train", "--config", str(config), "--out", str(tmp_path)]) == 2
    assert "momentum" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# solve


def test_solve_native_instance(trained, tmp_path, capsys):
    assert main(["gen", "--n", "4", "--seed", "2", "--out", str(tmp_path)]) == 0
    inst_path = tmp_path / "rand_n4_s2_0.motsp"
    out = tmp_path / "pf.csv"
    assert main(["solve", "--ckpt", str(trained["ckpt"]),
                 "--instance", str(inst_path), "--out", str(out)]) == 0
    assert "nondominated point(s) from 2 model(s)" in capsys.readouterr().out

    inst = load_native(inst_path)
    archive = ev.read_pf_csv(out)
    assert 1 <= len(archive) <= 2
    for entry in archive.entries:
        np.testing.assert_array_equal(
            entry.objectives, evaluate_objectives(inst, entry.tour))


def test_solve_tsplib_writes_unscaled_twin(trained, tmp_path):
    pa, pb = tmp_path / "a.tsp", tmp_path / "b.tsp"
    pa.write_text(TSPLIB_A)
    pb.write_text(TSPLIB_B)
    out = tmp_path / "pf.csv"
    assert main(["solve", "--ckpt", str(trained["ckpt"]),
                 "--tsplib", str(pa), str(pb), "--out", str(out)]) == 0
    unscaled = tmp_path / "pf_unscaled.csv"
    assert unscaled.exists()
    raw = ev.read_pf_csv(unscaled)
    # any 3-node tour walks the full triangle in both coordinate sets
    np.testing.assert_allclose(raw.points()[0],
                               [50.0 + 50.0 + 60.0, 10.0 + 40.0 + np.hypot(10, 40)])


def test_solve_wants_exactly_one_input(trained, tmp_path, capsys):
    assert main(["solve", "--ckpt", str(trained["ckpt"]),
                 "--out", str(tmp_path / "pf.csv")]) == 2
    assert "exactly one" in capsys.readouterr().err


def test_solve_rejects_unfinished_checkpoints(tmp_path, capsys):
    cfg = RunConfig(d_h=8, n_heads=2, d_ff=16, n_nodes=4, batch_size=4,
                    dataset_size=8, m_sub=2, seed=3)
    write_manifest(tmp_path, cfg, [])
    assert main(["gen", "--n", "4", "--seed", "0", "--out", str(tmp_path)]) == 0
    assert main(["solve", "--ckpt", str(tmp_path),
                 "--instance", str(tmp_path / "rand_n4_s0_0.motsp"),
                 "--out", str(tmp_path / "pf.csv")]) == 2
    assert "0/2" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval


def write_front(path, rows):
    entries = [ev.ArchiveEntry(Tour(t), np.array(o, dtype=np.float64), 1)
               for t, o in rows]
    ev.write_pf_csv(path, ev.ParetoArchive(entries), np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_eval_no_normalize_exact_value(tmp_path, capsys):
    pf = tmp_path / "front.csv"
    write_front(pf, [((0, 1, 2), (0.2, 0.2))])
    report = tmp_path / "hv.csv"
    assert main(["eval", "--pf", str(pf), "--no-normalize",
                 "--out", str(report)]) == 0
    assert "front: hv=1.000000 points=1" in capsys.readouterr().out
    lines = report.read_text().splitlines()
    assert lines[0] == "instance,method,hv,n_points"
    assert lines[1] == "-,front,1,1"


def test_eval_protocol_over_two_fronts(tmp_path, capsys):
    one, two = tmp_path / "one.csv", tmp_path / "two.csv"
    write_front(one, [((0, 1, 2), (1.0, 5.0)), ((1, 0, 2), (3.0, 3.0))])
    write_front(two, [((0, 2, 1), (2.0, 4.0)), ((2, 0, 1), (5.0, 1.0))])
    report = tmp_path / "hv.csv"
    assert main(["eval", "--pf", str(one), str(two), "--label", "demo",
                 "--out", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("demo,one,") and lines[2].startswith("demo,two,")
    hv_one = float(lines[1].split(",")[2])
    hv_two = float(lines[2].split(",")[2])
    assert 0.0 < hv_one <= 1.44 and 0.0 < hv_two <= 1.44


def test_eval_bad_ref(tmp_path, capsys):
    pf = tmp_path / "front.csv"
    write_front(pf, [((0, 1, 2), (0.2, 0.2))])
    assert main(["eval", "--pf", str(pf), "--ref", "1.2",
                 "--out", str(tmp_path / "hv.csv")]) == 2


def test_eval_missing_front_file(tmp_path):
    assert main(["eval", "--pf", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "hv.csv")]) == 1


def test_eval_malformed_front(tmp_path, capsys):
    pf = tmp_path / "front.csv"
    pf.write_text("wrong,header\n")
    assert main(["eval", "--pf", str(pf), "--out", str(tmp_path / "hv.csv")]) == 2


# ---------------------------------------------------------------------------
# plot


def test_plot_blocks_and_legend(tmp_path, capsys):
    one, two = tmp_path / "one.csv", tmp_path / "two.csv"
    write_front(one, [((0, 1, 2), (1.0, 5.0)), ((1, 0, 2), (3.0, 3.0))])
    write_front(two, [((0, 2, 1), (2.0, 4.0))])
    out = tmp_path / "plot.dat"
    assert main(["plot", "--pf", str(one), str(two), "--out", str(out)]) == 0

    blocks = out.read_text().strip().split("\n\n")
    assert len(blocks) == 2
    pts = [[float(x) for x in line.split()] for line in blocks[0].splitlines()]
    np.testing.assert_array_equal(pts, [[1.0, 5.0], [3.0, 3.0]])
    legend = (tmp_path / "plot.dat.legend").read_text().splitlines()
    assert legend == ["0 one", "1 two"]


# ---------------------------------------------------------------------------
# parser behaviour


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2

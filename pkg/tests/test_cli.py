import json

import pytest

from mhmhho.cli import ConfigError, load_config, main


def write_cfg(tmp_path, **cfg):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(cfg))
    return p


def test_offline_then_equivalence(tmp_path):
    cfg = write_cfg(tmp_path, mesh={"type": "structured", "nx": 4, "ny": 4}, k=1, r=3,
                    sources=[{"type": "sinsin"}, {"type": "random_poly", "seed": 1, "count": 2}])
    out = tmp_path / "out"
    assert main(["offline", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "offline.mhmb").exists()
    assert main(["equivalence", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert manifest["cache_hit"] is True
    assert len(report["gaps"]) == 3 and report["max_gap"] <= 1e-9


def test_solve_mhm_many_sources(tmp_path):
    cfg = write_cfg(tmp_path, mesh={"type": "structured", "nx": 2, "ny": 2}, k=1, r=2,
                    sources=[{"type": "random_poly", "seed": 0, "count": 100}])
    out = tmp_path / "o"
    assert main(["solve-mhm", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(list(out.glob("solution_*.csv"))) == 100
    assert len(list(out.glob("skeleton_*.csv"))) == 100
    manifest = json.loads((out / "manifest.json").read_text())
    assert isinstance(manifest["timings"]["factorization"], float)
    assert len(manifest["timings"]["solves"]) == 100
    assert (out / "solution_000.csv").read_text().splitlines()[0] == "cell,node_x,node_y,value"
    assert (out / "skeleton_000.csv").read_text().splitlines()[0] == "face,j,lambda"


@pytest.mark.parametrize("kind", ["solve-mshho", "solve-facebased"])
def test_face_exports(tmp_path, kind):
    cfg = write_cfg(tmp_path, mesh={"type": "sample"}, k=1, r=2)
    out = tmp_path / kind
    assert main([kind, "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "faces_000.csv").read_text().splitlines()[0] == "face,j,u_F"


def test_deterministic_outputs(tmp_path):
    cfg = write_cfg(tmp_path, mesh={"type": "voronoi", "seeds": 6}, k=2, r=2,
                    sources=[{"type": "sinsin"}])
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["offline", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["solve-mshho", "--config", str(cfg), "--out", str(out)]) == 0
        outs.append(out)
    for f in ("solution_000.csv", "faces_000.csv", "offline.mhmb"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_thread_count_does_not_change_cache(tmp_path):
    cfg = write_cfg(tmp_path, mesh={"type": "sample"}, k=1, r=2)
    assert main(["offline", "--config", str(cfg), "--out", str(tmp_path / "t1")]) == 0
    assert main(["offline", "--config", str(cfg), "--out", str(tmp_path / "t3"), "--threads", "3"]) == 0
    assert (tmp_path / "t1/offline.mhmb").read_bytes() == (tmp_path / "t3/offline.mhmb").read_bytes()


def test_cache_mismatch_exit(tmp_path, capsys):
    a = write_cfg(tmp_path, mesh={"type": "structured", "nx": 2, "ny": 2}, k=1, r=2)
    out = tmp_path / "o"
    assert main(["offline", "--config", str(a), "--out", str(out)]) == 0
    b = write_cfg(tmp_path, mesh={"type": "structured", "nx": 2, "ny": 2}, k=2, r=2)
    assert main(["solve-mhm", "--config", str(b), "--out", str(out)]) == 3
    assert "rerun `offline`" in capsys.readouterr().err


def test_audit_and_exit_codes(tmp_path):
    cfg = write_cfg(tmp_path, mesh={"type": "structured", "nx": 3, "ny": 2}, k=1, r=2)
    assert main(["audit", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    strict = write_cfg(tmp_path, mesh={"type": "structured", "nx": 3, "ny": 2}, k=1, r=2,
                       tolerances={"neumann": -1.0})
    assert main(["audit", "--config", str(strict), "--out", str(tmp_path / "b")]) == 1


def test_convergence_command(tmp_path):
    cfg = write_cfg(tmp_path, convergence={"ks": [0], "nxs": [2, 4, 8], "r": 2})
    out = tmp_path / "c"
    assert main(["convergence", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "H,k,m,error,slope" and len(lines) == 4


def test_unknown_kind_and_bad_config(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
    bad = write_cfg(tmp_path, k=-1, r="x", sources=[], bogus=1, mesh={"type": "hex"})
    assert main(["offline", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    for needle in ("unknown field 'bogus'", "k must be", "r must be", "sources must", "mesh.type"):
        assert needle in err


def test_load_config_defaults():
    cfg = load_config()
    assert cfg["k"] == 1 and cfg["r"] == 3
    with pytest.raises(ConfigError):
        load_config(overrides={"coefficient": {"type": "oscillatory", "eps": -1}})

import json

import pytest

from nullctl.cli import load_config, main

DIAGONAL = {"system": {"a_matrix": [[-1.0, 0.0], [0.0, -2.0]], "b_matrix": [[1.0, 0.0], [0.0, 1.0]],
                       "y0": [1.0, 1.0]},
            "dual": {"p": 1.5}}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def manifest(out):
    data = json.loads((out / "manifest.json").read_text())
    for f in data["files"]:
        assert (out / f).is_file()
    return data


def test_invalid_p_names_field(tmp_path, capsys):
    code = main(["synthesize", "--config", write(tmp_path, {"dual": {"p": 2.5}}), "--out", str(tmp_path)])
    assert code == 1
    assert "p:" in capsys.readouterr().err


@pytest.mark.parametrize("cfg, field", [
    ({"sytem": {}}, "sytem"), ({"system": {"n": "ten"}}, "n"), ({"optimizer": {"grad_tol": 0}}, "grad_tol"),
    ({"system": {"y0": "square"}}, "y0"), ({"system": {"a_matrix": [[-1.0]]}}, "b_matrix"),
])
def test_config_errors(tmp_path, cfg, field):
    from nullctl import ValidationError
    with pytest.raises(ValidationError) as err:
        load_config(write(tmp_path, cfg))
    assert err.value.field == field


def test_zero_data(tmp_path):
    out = tmp_path / "z"
    assert main(["synthesize", "--config", write(tmp_path, {"system": {"n": 10, "y0": "zero"}}),
                 "--out", str(out)]) == 0
    m = manifest(out)
    for key in ("terminal_residual", "y_T_norm", "phi_norm"):
        assert m["metrics"][key] == 0.0
    assert set(m["files"]) == {"control.csv", "trace.csv"}


def test_max_iters_exit_code(tmp_path):
    cfg = {"system": {"n": 10}, "optimizer": {"max_iters": 1, "grad_tol": 1e-14}}
    assert main(["synthesize", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_synthesize_reproducible(tmp_path):
    cfg = write(tmp_path, {"system": {"n": 12}, "dual": {"p": 1.2, "beta": 0.16}})
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["--out", str(out), "synthesize", "--config", cfg]) == 0
    for name in ("control.csv", "trace.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m = manifest(outs[0])
    assert m["metrics"]["terminal_residual"] <= 1e-7
    assert m["config"]["dual"]["p"] == 1.2


def test_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("NULLCTL_OUT", str(tmp_path / "env"))
    assert main(["duality", "--config", write(tmp_path, DIAGONAL)]) == 0
    m = manifest(tmp_path / "env")
    assert m["metrics"]["passed"] and abs(m["metrics"]["gap"]) < 1e-6


def test_observability_needs_three(tmp_path, capsys):
    assert main(["observability", "--n-list", "10", "--out", str(tmp_path)]) == 1
    assert "need ≥ 3 meshes" in capsys.readouterr().err


def test_observability_sweep(tmp_path):
    cfg = write(tmp_path, {"dual": {"p": 1.2, "beta": 0.16}, "observability": {"n_random": 100}})
    outs = [tmp_path / "a", tmp_path / "b"]
    for out, jobs in zip(outs, ("1", "2")):
        assert main(["observability", "--config", cfg, "--n-list", "6", "8", "10",
                     "--jobs", jobs, "--out", str(out)]) == 0
    for name in ("observability.csv", "certificates.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert len(manifest(outs[0])["metrics"]["c_lower"]) == 3


def test_rates_default(tmp_path):
    assert main(["rates", "--out", str(tmp_path)]) == 0
    slope = manifest(tmp_path)["metrics"]["slope"]
    assert 1.7 <= slope <= 2.3


def test_table_skips_large_meshes(tmp_path):
    out = tmp_path / "t"
    code = main(["table", "table2", "--max-n", "10", "--out", str(out)])
    assert code in (0, 2)
    rows = (out / "table2.csv").read_text().splitlines()
    assert rows[0].startswith("name,scheme,phi_norm,h_beta,y_T_norm,paper_phi_norm,paper_y_T_norm")
    status = {tuple(r.split(",")[:2]): r.split(",")[7] for r in rows[1:]}
    assert status[("1D-10", "eliminated")] == "ok"
    assert status[("1D-100", "paper-verbatim")] == "skipped"
    assert status[("1D-500", "eliminated")] == "skipped"
    assert "1D-100,eliminated,,0.4778686941325897,,0.796,0.4565,skipped" in rows[3]
    manifest(out)


def test_table_paper_columns(tmp_path):
    main(["table", "table3", "--max-n", "10", "--out", str(tmp_path)])
    rows = [r.split(",") for r in (tmp_path / "table3.csv").read_text().splitlines()[1:]]
    assert [float(x) for x in (rows[0][5], rows[0][6])] == [4.4266, 0.0111]
    assert [float(x) for x in (rows[4][5], rows[4][6])] == [5.0956, 5.5178e-06]

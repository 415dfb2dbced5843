from click.testing import CliRunner

from multift.cli import main


def test_stdout_csv_and_exit_zero():
    runner = CliRunner()
    result = runner.invoke(main, ["closed-ft", "--ensemble", "2", "--seed", "1"])
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    assert lines[0] == "experiment,seed,quantity,value,target,tolerance,pass"
    assert all(line.endswith(",True") for line in lines[1:])


def test_out_file_and_determinism(tmp_path):
    runner = CliRunner()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        result = runner.invoke(
            main, ["kolmogorov", "--ensemble", "1", "--seed", "6", "--out", str(out)]
        )
        assert result.exit_code == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("experiment = kolmogorov\nensemble = 1\nseed = 3\n")
    runner = CliRunner()
    result = runner.invoke(
        main, ["kolmogorov", "--config", str(conf), "--seed", "9"]
    )
    assert result.exit_code == 0
    assert ",9," in result.output and ",3," not in result.output


def test_malformed_config_exits_2_without_csv(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("this is not key value\n")
    out = tmp_path / "never.csv"
    runner = CliRunner()
    result = runner.invoke(
        main, ["kolmogorov", "--config", str(conf), "--out", str(out)]
    )
    assert result.exit_code == 2
    assert not out.exists()


def test_unknown_config_key_exits_2(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("experiment = kolmogorov\nwat = 1\n")
    runner = CliRunner()
    result = runner.invoke(main, ["kolmogorov", "--config", str(conf)])
    assert result.exit_code == 2


def test_config_experiment_mismatch_exits_2(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("experiment = closed-ft\n")
    runner = CliRunner()
    result = runner.invoke(main, ["kolmogorov", "--config", str(conf)])
    assert result.exit_code == 2

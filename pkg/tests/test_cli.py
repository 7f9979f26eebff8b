import numpy as np
import pytest

from schwarzvi.cli import main, parse_config
from schwarzvi.errors import ConfigurationError
from schwarzvi.experiments import (
    CSV_HEADER,
    ExperimentConfig,
    load_reference,
    run_experiment,
    save_reference,
)


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    assert lines[0] == CSV_HEADER
    data = np.array([[float(tok) for tok in line.split(",")] for line in lines[1:]])
    return data


def test_plate_run_reaches_tolerance(tmp_path):
    out = tmp_path / "plate.csv"
    code = main(
        [
            "--problem", "plate", "--n", "16", "--ratio", "8", "--overlap", "2",
            "--levels", "2", "--tau", "0.2", "--tol", "1e-6", "--out", str(out),
        ]
    )
    assert code == 0
    data = read_csv(out)
    rel = data[:, 2]
    assert np.all(np.diff(rel[1:]) <= 1e-12)  # nonincreasing after the first row
    assert rel[-1] < 1e-6
    assert np.all(rel[:-1] > 0)
    assert np.all(data[:, 3] <= 1e-12)  # max violation column
    assert (tmp_path / "plate.csv.ref").exists()


def test_levels_one_smoke(tmp_path):
    out = tmp_path / "one.csv"
    code = main(
        ["--problem", "plate", "--n", "8", "--ratio", "4", "--overlap", "1",
         "--levels", "1", "--tol", "1e-4", "--max-outer", "400", "--out", str(out)]
    )
    assert code == 0
    assert read_csv(out)[-1, 2] < 1e-4


def test_invalid_overlap_exits_2(tmp_path):
    code = main(["--n", "16", "--ratio", "8", "--overlap", "4", "--out", str(tmp_path / "x.csv")])
    assert code == 2


def test_unwritable_output_exits_2(tmp_path):
    code = main(["--n", "8", "--ratio", "4", "--overlap", "1",
                 "--out", str(tmp_path / "missing" / "x.csv")])
    assert code == 2


def test_nonconvergence_exit_code(tmp_path):
    out = tmp_path / "short.csv"
    code = main(
        ["--problem", "plate", "--n", "8", "--ratio", "4", "--overlap", "1",
         "--levels", "1", "--tol", "1e-10", "--max-outer", "3", "--out", str(out)]
    )
    assert code == 1
    assert out.exists()


def test_rerun_identical_up_to_timing(tmp_path):
    args = ["--problem", "plate", "--n", "8", "--ratio", "4", "--overlap", "1",
            "--levels", "2", "--tol", "1e-5", "--max-outer", "200"]
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    rows1 = out1.read_text().strip().splitlines()
    rows2 = out2.read_text().strip().splitlines()
    assert len(rows1) == len(rows2)
    for a, b in zip(rows1, rows2):
        # identical except the wall-time column
        assert a.rsplit(",", 1)[0] == b.rsplit(",", 1)[0]


def test_reference_round_trip(tmp_path):
    out = tmp_path / "run.csv"
    config = ExperimentConfig(problem="plate", n=8, ratio=4, overlap=1,
                              tol=1e-5, max_outer=300, out=str(out))
    rec1 = run_experiment(config)
    ref_path = str(out) + ".ref"
    config2 = ExperimentConfig(problem="plate", n=8, ratio=4, overlap=1,
                               tol=1e-5, max_outer=300, out=str(tmp_path / "run2.csv"),
                               reference=f"load:{ref_path}")
    rec2 = run_experiment(config2)
    assert rec2.reference_energy == pytest.approx(rec1.reference_energy, rel=1e-12)
    assert np.array_equal(rec1.energies, rec2.energies)


def test_reference_mismatch_rejected(tmp_path):
    out = tmp_path / "run.csv"
    config = ExperimentConfig(problem="plate", n=8, ratio=4, overlap=1,
                              tol=1e-4, max_outer=200, out=str(out))
    run_experiment(config)
    bad = ExperimentConfig(problem="plate", n=16, ratio=8, overlap=2,
                           out=str(tmp_path / "bad.csv"),
                           reference=f"load:{out}.ref")
    with pytest.raises(ConfigurationError):
        run_experiment(bad)


def test_reference_file_format(tmp_path):
    config = ExperimentConfig(problem="control", n=8, ratio=4, overlap=1)
    u = np.linspace(-1, 1, 11)
    path = tmp_path / "ref.txt"
    save_reference(path, config, u)
    loaded = load_reference(path, config)
    assert np.array_equal(loaded, u)  # full-precision round trip


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("problem=plate\nn=8\nratio=4\noverlap=1\ntol=1e-4\nmax_outer=300\n")
    parsed = parse_config(["--config", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert parsed.n == 8 and parsed.ratio == 4 and parsed.tol == 1e-4
    parsed = parse_config(["--config", str(cfg), "--n", "16", "--ratio", "8",
                           "--overlap", "2", "--out", str(tmp_path / "o.csv")])
    assert parsed.n == 16 and parsed.ratio == 8  # flags override the file


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("bogus=1\n")
    with pytest.raises(ConfigurationError):
        parse_config(["--config", str(cfg)])


def test_reference_none_uses_energy_decrease(tmp_path):
    out = tmp_path / "none.csv"
    code = main(["--problem", "plate", "--n", "8", "--ratio", "4", "--overlap", "1",
                 "--reference", "none", "--tol", "1e-8", "--max-outer", "300",
                 "--out", str(out)])
    assert code == 0
    data = read_csv(out)
    assert data[-1, 2] < 1e-8  # relative energy decrease column

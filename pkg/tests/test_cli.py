"""Command line interface tests."""
from pathlib import Path

import pytest
from _pytest.capture import CaptureFixture
from conftest import read_logs

CONFIG = """
target_name = domain2
epochs = 1
replications = 1
batch_size = 12
hidden = 8
synthetic.domains = 3
synthetic.latent_dim = 2
synthetic.samples = 48
synthetic.test_samples = 40
"""


def _config(directory: Path, text: str = CONFIG) -> str:
    """Write a configuration file.

    Args:
        directory: Directory.
        text: Configuration.

    Returns:
        Path.
    """
    path = directory / "msdial.conf"
    path.write_text(text)
    return str(path)


def test_gen_synth(tmp_path: Path) -> None:
    """Test synthetic domains generation."""
    from msdial import load_feature_table
    from msdial.__main__ import main

    out = tmp_path / "synth"
    args = ["gen-synth", "--config", _config(tmp_path), "--domains", "2"]
    assert main([*args, "--shift", "identity", "--out", str(out)]) == 0
    assert sorted(path.name for path in out.iterdir()) == [
        "domain0.test.tsv",
        "domain0.train.tsv",
        "domain1.test.tsv",
        "domain1.train.tsv",
    ]
    train = load_feature_table(out / "domain1.train.tsv")
    assert train.samples.shape == (48, 2)
    assert len(load_feature_table(out / "domain1.test.tsv")) == 40


def test_train(tmp_path: Path, capsys: CaptureFixture[str]) -> None:
    """Test experiments run from a configuration file."""
    from msdial.__main__ import main

    out = tmp_path / "results"
    args = ["train", "--config", _config(tmp_path), "--out", str(out)]
    assert main([*args, "--method", "src,msdial", "--seed", "2"]) == 0
    assert (out / "results.csv").is_file()
    assert (out / "results.json").is_file()
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0].startswith("method,target,mean,stderr")
    assert [line.split(",")[:2] for line in lines[1:]] == [
        ["src", "domain2"],
        ["msdial", "domain2"],
    ]
    logs = read_logs(capsys.readouterr().out)
    assert [log["method"] for log in logs] == ["src", "msdial"]
    assert all(log["seed"] == 2 for log in logs)


def test_ablate(tmp_path: Path) -> None:
    """Test entropy weight sweep."""
    from msdial.__main__ import main

    out = tmp_path / "ablation"
    args = ["ablate", "--config", _config(tmp_path), "--out", str(out)]
    assert main([*args, "--lambdas", "0.1,0.001"]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert [line.split(",")[5] for line in lines] == ["lambda", "0.001", "0.1"]


def test_ablate_all_targets(tmp_path: Path) -> None:
    """Test entropy weight sweep averaged over targets."""
    from msdial.__main__ import main

    out = tmp_path / "ablation"
    no_target = _config(tmp_path, CONFIG.replace("target_name = domain2", ""))
    args = ["ablate", "--config", no_target, "--out", str(out)]
    assert main([*args, "--lambdas", "0.1,0.001"]) == 0
    rows = [line.split(",") for line in (out / "ablation.csv").read_text().splitlines()]
    assert len(rows) == 9
    assert [(row[1], row[5]) for row in rows[-2:]] == [
        ("average", "0.001"),
        ("average", "0.1"),
    ]


def test_export_features_and_project(tmp_path: Path) -> None:
    """Test features export then projection."""
    from msdial import load_feature_table
    from msdial.__main__ import main

    out = tmp_path / "features"
    args = ["export-features", "--config", _config(tmp_path), "--out", str(out)]
    assert main(args) == 0
    for domain in range(3):
        table = load_feature_table(out / f"domain{domain}.features.tsv")
        assert table.samples.shape == (40, 8)
        assert table.is_labeled

    projection = tmp_path / "projection.csv"
    args = ["project", "--input", str(out / "domain2.features.tsv")]
    assert main([*args, "--out", str(projection)]) == 0
    assert len(projection.read_text().splitlines()) == 41


def test_errors(tmp_path: Path, capsys: CaptureFixture[str]) -> None:
    """Test errors exit with status 1."""
    from msdial.__main__ import main

    with pytest.raises(SystemExit) as exit_info:
        main(["train", "--config", str(tmp_path / "missing.conf")])
    assert exit_info.value.code == 1
    assert "error:" in capsys.readouterr().err

    no_target = _config(tmp_path, CONFIG.replace("target_name = domain2", ""))
    with pytest.raises(SystemExit) as exit_info:
        main(["export-features", "--config", no_target])
    assert exit_info.value.code == 1

    with pytest.raises(SystemExit) as exit_info:
        main(["train", "--config", _config(tmp_path), "--method", "dann"])
    assert exit_info.value.code == 1

    with pytest.raises(SystemExit) as exit_info:
        main(["train", "--config", _config(tmp_path), "--target", "domain9"])
    assert exit_info.value.code == 1

    with pytest.raises(SystemExit) as exit_info:
        main(["project", "--input", str(tmp_path / "missing.tsv"), "--out", "x.csv"])
    assert exit_info.value.code == 1

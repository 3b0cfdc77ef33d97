import json

import numpy as np
import pytest

from wavekg.cli import EXIT_BLOWUP, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from wavekg.config import PRESETS, SCHEMA, ConfigError, config_schema, parse_config, preset
from wavekg.diagnostics import read_csv, series
from wavekg.runner import OUTPUT_ENV, latest_checkpoint, simulate

MINIMAL = """
[grid]
n = 32
L = 16.0

[time]
T = 2.0
"""

SMALL = """
[grid]
n = 64
L = 32.0

[time]
dt = 0.25
T = 4.0
record_every = 0.5
checkpoint_every = 2.0

[diagnostics]
order_cap = 1

[output]
formats = ["csv", "json"]

[couplings]
C1 = 1.0
C2 = 1.0
C1ab = [[0.0, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]

[[data.bumps]]
target = "w"
amplitude = 0.01
width = 2.0

[[data.bumps]]
target = "v"
amplitude = 0.01
center = [0.0, 0.5]
width = 2.0
velocity = true
"""


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config(MINIMAL)
        assert (cfg.delta, cfg.delta0, cfg.order_cap) == (0.05, 0.1, 2)
        assert cfg.dt == pytest.approx(0.5 * cfg.h)
        assert cfg.couplings.is_linear
        assert cfg.null == "standard"
        assert cfg.decay_window == (5.0, 5.0)

    def test_negative_dt(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + "dt = -0.1\n")
        assert exc.value.key == "time.dt"

    def test_unknown_key_suggestion(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL.replace("[grid]\nn", "[gird]\nn"))
        assert "grid.n" in str(exc.value)

    def test_missing_required(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[grid]\nn = 32\nL = 16.0\n")
        assert exc.value.key == "time.T"

    @pytest.mark.parametrize("extra, key", [
        ("record_every = 0.3\n", "time.record_every"),
        ("[diagnostics]\norder_cap = 4\n", "diagnostics.order_cap"),
        ("[diagnostics]\nnull = \"sometimes\"\n", "diagnostics.null"),
        ("[couplings]\nC1ab = [[1.0, 2.0], [3.0, 4.0]]\n", "couplings.C1ab"),
        ("[[data.bumps]]\ntarget = \"w\"\namplitude = 1.0\nwidht = 2.0\n", "data.bumps[0].widht"),
    ])
    def test_invalid_values(self, extra, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(MINIMAL + extra)
        assert exc.value.key == key

    def test_bad_toml(self):
        with pytest.raises(ConfigError):
            parse_config("[grid\n")

    def test_schema_lists_every_key(self):
        schema = config_schema()
        assert set(schema) >= set(SCHEMA)
        assert schema["grid.n"]["required"] is True

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_parse(self, name):
        cfg = preset(name)
        assert cfg.T > 0 and cfg.n % 2 == 0
        assert cfg.source == PRESETS[name]


class TestCli:
    def test_schema_command(self, capsys):
        assert main(["print-config-schema"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert "diagnostics.delta0" in out

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text(MINIMAL + "dt = -0.1\n")
        assert main(["run", str(p), "--output", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "time.dt" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_IO

    def test_blow_up_exit(self, tmp_path):
        p = tmp_path / "big.toml"
        text = SMALL.replace("amplitude = 0.01", "amplitude = 30.0").replace("L = 32.0", "L = 64.0")
        text = text.replace("n = 64", "n = 32").replace("T = 4.0", "T = 20.0").replace("dt = 0.25", "dt = 1.0")
        text = text.replace("record_every = 0.5", "record_every = 1.0")
        p.write_text(text)
        assert main(["run", str(p), "--output", str(tmp_path / "o")]) == EXIT_BLOWUP

    def test_run_writes_outputs(self, tmp_path, capsys):
        p = tmp_path / "small.toml"
        p.write_text(SMALL)
        out = tmp_path / "out"
        assert main(["run", str(p), "--output", str(out)]) == EXIT_OK
        report = json.loads(capsys.readouterr().out.split("\n", 2)[2])
        assert report["passed"]
        recs = read_csv(out / "records.csv")
        assert [r.t for r in recs] == [0.5 * i for i in range(9)]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["records"] == 9
        assert (out / "checkpoints" / "ckpt_00000008.wkg").exists()

    def test_environment_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        monkeypatch.chdir(tmp_path)
        out = simulate(parse_config(MINIMAL.replace("T = 2.0", "T = 1.0")), echo=lambda *_: None)
        assert out.directory == tmp_path / "env"
        assert (tmp_path / "env" / "records.csv").exists()
        out = simulate(parse_config(MINIMAL.replace("T = 2.0", "T = 1.0")), tmp_path / "cli", echo=lambda *_: None)
        assert out.directory == tmp_path / "cli"

    def test_failed_check_exit(self, tmp_path, monkeypatch):
        import wavekg.verify as verify
        from wavekg.runner import Check

        monkeypatch.setattr(verify, "oracles_suite", lambda: [Check("forced", False, 2.0, 1.0)])
        assert main(["verify", "oracles", "--output", str(tmp_path)]) == EXIT_CHECK
        doc = json.loads((tmp_path / "verify-oracles.json").read_text())
        assert doc["checks"]["forced"]["passed"] is False


class TestRuns:
    def test_zero_coupling_energy_constant(self, tmp_path):
        cfg = parse_config(SMALL.replace("C1 = 1.0", "C1 = 0.0").replace("C2 = 1.0", "C2 = 0.0")
                           .replace("C1ab = [[0.0, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]", "")
                           .replace("n = 64", "n = 128"))
        out = simulate(cfg, tmp_path, echo=lambda *_: None)
        _, e = series(read_csv(tmp_path / "records.csv"), "E_w[e]")
        assert np.max(np.abs(e / e[0] - 1)) < 1e-10
        assert out.ok

    def test_same_config_same_bytes(self, tmp_path):
        cfg = parse_config(SMALL)
        simulate(cfg, tmp_path / "a", echo=lambda *_: None)
        simulate(cfg, tmp_path / "b", echo=lambda *_: None)
        for name in ("records.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resume_is_bit_identical(self, tmp_path, capsys):
        p = tmp_path / "small.toml"
        p.write_text(SMALL)
        assert main(["run", str(p), "--output", str(tmp_path / "full")]) == EXIT_OK
        assert main(["run", str(p), "--output", str(tmp_path / "part"), "--stop-at", "3.0"]) == EXIT_OK
        ck = latest_checkpoint(tmp_path / "part")
        assert ck.name == "ckpt_00000008.wkg"
        assert main(["resume", str(tmp_path / "part")]) == EXIT_OK
        for name in ("records.csv", "summary.json"):
            assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()

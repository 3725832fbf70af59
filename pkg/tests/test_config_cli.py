import json
import subprocess
import sys

import numpy as np
import pytest

from cracktip import cli
from cracktip.config import ConfigError, ExperimentConfig, list_presets, load_preset, preset_names, resolve, validate_document
from cracktip.runner import build_problem, run
from cracktip.svg import LineChart

REQUIRED = {"straight-crack", "diameter", "spiral", "kinked", "two-scale", "anisotropic", "second-member"}


def minimal(**over):
    doc = {
        "name": "tiny",
        "crack": {"generator": "segment", "params": {"endpoints": [[-1.0, 0.0], [0.0, 0.0]]}},
        "domain_radius": 1.0,
        "g": {"type": "cracktip_trace", "C": 1.0},
        "mesh": {"target_h": 0.2, "tip_grading_exponent": 0.5, "min_h": 0.005, "levels": 1},
    }
    doc.update(over)
    return doc


class TestPresets:
    def test_required_presets(self):
        names = [n for n, _ in list_presets()]
        assert len(names) >= 7
        assert REQUIRED <= set(names)
        assert all(desc for _, desc in list_presets())

    @pytest.mark.parametrize("name", preset_names())
    def test_preset_validates_and_builds(self, name):
        cfg = load_preset(name)
        assert cfg.name == name
        p = build_problem(cfg)
        assert p.crack.length > 0

    def test_anisotropic_declares_diag_4_1(self):
        cfg = load_preset("anisotropic")
        assert cfg.coefficients["type"] == "constant"
        assert np.array_equal(np.asarray(cfg.coefficients["matrix"]), np.diag([4.0, 1.0]))
        assert "change_of_variable" in cfg.checks

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            resolve("no-such-preset")


class TestValidation:
    def test_round_trip(self):
        cfg = ExperimentConfig.from_dict(minimal())
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.lam == 0.0 and cfg.mesh["levels"] == 1

    @pytest.mark.parametrize(
        "over,path",
        [
            ({"domain_radius": -1.0}, "domain_radius"),
            ({"lambda": 0.0, "f": {"type": "constant", "value": 1.0}}, "f"),
            ({"coefficients": {"type": "constant", "matrix": [[1.0, 0.2], [0.0, 1.0]]}}, "coefficients.matrix"),
            ({"coefficients": {"type": "constant", "matrix": [[1.0, 0.0], [0.0, 0.05]]}}, "coefficients.matrix"),
            ({"coefficients": {"type": "holder", "delta": 5.0, "alpha": 0.5, "M": [[1, 0], [0, 1]]}},
             "coefficients.delta"),
            ({"correction": {"mode": "holder"}}, "correction.mode"),
            ({"schedule": {"radii": [0.5, 1.2]}}, "schedule.radii[1]"),
            ({"g": {"type": "bogus"}}, "g.type"),
            ({"mesh": {"levels": 0}}, "mesh.levels"),
        ],
    )
    def test_error_paths(self, over, path):
        with pytest.raises(ConfigError) as exc:
            validate_document(minimal(**over))
        assert exc.value.path == path

    def test_missing_field_named(self):
        doc = minimal()
        del doc["g"]
        with pytest.raises(ConfigError) as exc:
            validate_document(doc)
        assert exc.value.path == "g"


class TestRunner:
    def test_tiny_run_deterministic(self):
        a = run(minimal())
        b = run(minimal(), threads=3)
        assert a.report.to_json() == b.report.to_json()
        assert a.profile.to_csv() == b.profile.to_csv()
        assert a.profile.to_csv().splitlines()[0] == "r,E,E_over_r,corrected,N,P"

    def test_report_has_no_nan(self):
        text = run(minimal()).report.to_json()
        assert "NaN" not in text and "Infinity" not in text
        json.loads(text)


class TestCLI:
    def test_presets_command(self, capsys):
        assert cli.main(["presets"]) == 0
        out = capsys.readouterr().out
        for n in REQUIRED:
            assert n in out

    def test_negative_radius_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(minimal(domain_radius=-1.0)))
        code = cli.main(["run", str(p), "--out-dir", str(tmp_path / "out")])
        assert code != 0
        assert "domain_radius" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text("{ not json")
        assert cli.main(["run", str(p)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_run_mesh_report(self, tmp_path, capsys):
        cfgp = tmp_path / "tiny.json"
        cfgp.write_text(json.dumps(minimal()))
        out = tmp_path / "run"
        code = cli.main(["run", str(cfgp), "--out-dir", str(out), "--mesh-out", str(out / "mesh.json"),
                         "--solution-out", str(out / "solution.json")])
        assert code in (0, 1)
        for f in ("results.csv", "report.json", "profile.svg", "blowup.svg", "mesh.json", "solution.json"):
            assert (out / f).is_file()
        sol = json.loads((out / "solution.json").read_text())
        mesh = json.loads((out / "mesh.json").read_text())
        assert sol["mesh_ref"] == "mesh.json"
        assert len(sol["nodal_values"]) == len(mesh["vertices"])
        capsys.readouterr()
        assert cli.main(["report", str(out)]) == code
        assert "run: tiny" in capsys.readouterr().out
        assert cli.main(["mesh", str(cfgp), "--mesh-out", str(tmp_path / "m.json")]) == 0
        assert (tmp_path / "m.json").read_text() == (out / "mesh.json").read_text()

    def test_report_missing_dir(self, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == 2

    def test_pipeline_error_exit(self, tmp_path, capsys):
        # schema-valid, but the crack leaves the disk: the mesh stage fails
        doc = minimal(domain_radius=0.5, g={"type": "zero"})
        p = tmp_path / "outside.json"
        p.write_text(json.dumps(doc))
        assert cli.main(["run", str(p), "--out-dir", str(tmp_path / "o")]) == 3
        assert "stage mesh" in capsys.readouterr().err

    def test_console_script(self):
        res = subprocess.run([sys.executable, "-m", "cracktip.cli", "presets"], capture_output=True, text=True)
        assert res.returncode == 0 and "straight-crack" in res.stdout


def test_svg_chart_deterministic():
    ch = LineChart("t", "r", "y").add("a", [0.1, 0.01, 1.0], [1.0, 2.0, 3.0])
    s = ch.to_svg()
    assert s == LineChart("t", "r", "y").add("a", [0.1, 0.01, 1.0], [1.0, 2.0, 3.0]).to_svg()
    assert s.startswith("<svg") and "<polyline" in s
    empty = LineChart("t", "r", "y", note="nothing").to_svg()
    assert "nothing" in empty

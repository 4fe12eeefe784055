import json
import math

import pytest

from slipform.config import ConfigError, UnitError, load_config, parse_config, write_manifest


def test_empty_shear_config_defaults(tmp_path):
    cfg = parse_config('experiment = "simple_shear"\n')
    m = cfg.manifest()
    assert m["solver"]["algorithm"] == "fb_variational"
    assert m["solver"]["w"] == 21.1
    assert m["solver"]["delta"] == 1e-10
    assert m["time_integration"] == "expmap"
    assert m["material"]["mu"] == 21.1 and m["material"]["kappa"] == 49.98 and m["material"]["Q0"] == 0.06
    assert m["orientation"] == [0.0, 0.0, 0.0]
    assert m["loading"]["increment"] == 0.02 and m["loading"]["stop"] == 4.0
    assert m["version"] and len(m["config_sha256"]) == 64
    path = write_manifest(cfg, tmp_path)
    assert json.loads(path.read_text()) == json.loads(json.dumps(m))


def test_w_scale_resolves_to_mu():
    cfg = parse_config("[solver]\nw_scale = 1.0\n")
    assert cfg.manifest()["solver"]["w"] == pytest.approx(21.1)
    cfg = parse_config("[solver]\nw_scale = 10.0\n")
    assert cfg.solver.w == pytest.approx(211.0)


def test_misspelled_key_is_named():
    with pytest.raises(ConfigError, match="solver.algoritm"):
        parse_config('[solver]\nalgoritm = "fb_variational"\n')
    with pytest.raises(ConfigError, match="'experimnet'"):
        parse_config('experimnet = "tensile"\n')
    with pytest.raises(ConfigError, match="solver.tolerances.newtn"):
        parse_config("[solver.tolerances]\nnewtn = 1e-9\n")


def test_parse_error_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config('experiment = "tensile"\n\n[solver\n')


def test_c2_units():
    cfg = parse_config("[material]\nc2 = 2.0\n")
    assert cfg.material.c2 == pytest.approx(2e3)
    cfg = parse_config('[material]\nc2 = 5.0\nc2_unit = "GPa*um^2"\n')
    assert cfg.material.c2 == 5.0
    with pytest.raises(UnitError):
        parse_config('[material]\nc2 = 1.0\nc2_unit = "MPa"\n')
    with pytest.raises(UnitError):
        parse_config("[material]\nc2 = -1.0\n")


def test_experiment_defaults():
    t = parse_config('experiment = "tensile"\n')
    assert t.orientation == pytest.approx((math.pi / 6, math.pi / 4, 0.0))
    assert t.material.c1 == 0.1
    assert t.tensile.nx * t.tensile.ny == 160
    assert not t.given("orientation.a")
    t = parse_config('experiment = "tensile"\n[orientation]\na = 0.0\n')
    assert t.orientation[0] == 0.0 and t.given("orientation.a")


@pytest.mark.parametrize("text", [
    'experiment = "compression"\n',
    'catalogue = "bcc48"\n',
    'time_integration = "forward_euler"\n',
    '[solver]\nalgorithm = "newton"\n',
    "[loading]\nincrement = 0.03\nstop = 0.1\n",
    "[loading]\nincrement = -0.1\n",
    '[loading]\ncomponent = "F44"\n',
    "[loading]\npath = [[[1, 0, 0], [0, 1, 0], [0, 0, 1]]]\n",
    '[output]\nformats = ["csv", "hdf5"]\n',
    "[material]\nmu = -1.0\n",
    '[material]\nmu = "soft"\n',
    "[tensile]\nnx = 2.5\n",
    "[solver]\nglobalize = 1\n",
    "[sweep]\nw_scales = [0.0]\n",
    'solver = 3\n',
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_custom_path():
    cfg = parse_config('experiment = "custom_path"\n[loading]\n'
                       'path = [[[1, 0.01, 0], [0, 1, 0], [0, 0, 1]], [[1, 0.02, 0], [0, 1, 0], [0, 0, 1]]]\n')
    assert cfg.loading.n_steps == 2
    assert cfg.loading.deformation(2)[0, 1] == 0.02


def test_load_config_hash(tmp_path):
    p = tmp_path / "a.toml"
    p.write_text('experiment = "simple_shear"\n')
    a = load_config(p)
    b = parse_config('experiment = "simple_shear"\n')
    assert a.source_hash == b.source_hash
    assert parse_config('experiment = "simple_shear"\n# note\n').source_hash != a.source_hash

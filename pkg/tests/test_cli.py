import csv

import numpy as np
import pytest

from nplet import io as nio
from nplet.cli import RunConfig, run
from nplet.errors import ConfigError
from nplet.misspec import MIN_VALUE


def write_cfg(path, **kv):
    path.write_text("# test config\n" + "".join(f"{k}={v}\n" for k, v in kv.items()))
    return path


def outputs(d):
    """file name -> bytes, with the manifest timestamp line removed"""
    res = {}
    for p in sorted(d.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "manifest.txt":
                data = b"".join(l for l in data.splitlines(True) if not l.startswith(b"timestamp="))
            res[str(p.relative_to(d))] = data
    return res


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    base = dict(width=8, extent=1.0, r_in=0.4, t=50.0)
    steps = {}

    def step(name, cmd, extra=(), **kv):
        out = root / name
        cfg = write_cfg(root / f"{name}.cfg", **base, **kv)
        code = run([cmd, "--config", str(cfg), "--out", str(out), *extra])
        steps[name] = (code, out, cfg)
        return out

    ph = step("phantom", "phantom", total=64.0)
    de = step("project", "project", phantom_file=ph / "phantom.npli")
    common = dict(design_file=de / "design.npld", phantom_file=ph / "phantom.npli")
    si = step("simulate", "simulate", ["--seed", "7"], **common)
    sino = dict(common, sinogram_file=si / "sinogram.npls", max_iters=100)
    step("mlem", "mlem", **sino)
    step("map", "map", **sino)
    step("lambda_opt", "lambda-opt", **sino)
    seg = dict(sino, segmentation_file=ph / "labels.txt")
    step("wlb", "wlb", B=5, **seg)
    ar = step("npl", "npl", ["--workers", "2"], rho=1.0, B=6, **seg)
    step("summarize", "summarize", archive_dir=ar, level=0.9)
    step("coverage", "coverage", archive_dir=ar, target_file=ph / "phantom.npli")
    ch = step("gibbs", "gibbs", burn_in=20, n_samples=200, **common, sinogram_file=si / "sinogram.npls")
    step("diagnose", "diagnose", chain_dir=ch, m_max=10, **common)
    return root, steps


def test_pipeline_exit_codes(pipeline):
    _, steps = pipeline
    assert {k: v[0] for k, v in steps.items()} == {k: 0 for k in steps}


def test_pipeline_artifacts(pipeline):
    _, steps = pipeline
    out = {k: v[1] for k, v in steps.items()}
    img, w, h = nio.read_image(out["phantom"] / "phantom.npli")
    assert (w, h) == (8, 8) and img.sum() == pytest.approx(64.0)
    assert nio.read_segmentation(out["phantom"] / "labels.txt").p_m == 2
    sino = nio.read_sinogram(out["simulate"] / "sinogram.npls")
    assert sino.t == 50.0 and np.all(sino.values == np.round(sino.values))
    for stem in ("mlem", "map", "lambda_opt"):
        assert (out[stem] / f"{stem}.npli").exists() and (out[stem] / f"{stem}.pgm.scale.txt").exists()
    rows = nio.read_csv(out["wlb"] / "wlb.csv")
    assert len(rows) == 5 and all(float(r["mass"]) == pytest.approx(float(r["weight_total"])) for r in rows)
    assert nio.read_archive_draws(out["npl"]).shape == (6, 64)
    assert nio.read_meta(out["npl"])["rho"] == "1.0"
    for stem in ("mean", "std", "lower", "upper"):
        assert (out["summarize"] / f"{stem}.npli").exists()
    frac = float(nio.parse_kv((out["coverage"] / "fraction.txt").read_text())["fraction"])
    assert 0.0 <= frac <= 1.0
    diag = nio.read_csv(out["diagnose"] / "diagnostics.csv")
    assert len(diag) == 10
    check = nio.parse_kv((out["diagnose"] / "burn_in_check.txt").read_text())
    assert check["empirical_trend_increasing"] in ("true", "false")


def test_manifest_records_inputs(pipeline):
    _, steps = pipeline
    code, out, cfg = steps["simulate"]
    kv = nio.parse_kv((out / "manifest.txt").read_text())
    assert kv["seed"] == "7" and kv["command"] == "simulate"
    assert kv[f"input:{cfg}"] == nio.file_hash(cfg)
    assert "timestamp" in kv


def test_rerun_byte_identical(pipeline, tmp_path):
    _, steps = pipeline
    for name, cmd, extra in (("simulate", "simulate", ["--seed", "7"]), ("npl", "npl", ["--workers", "1"]),
                             ("gibbs", "gibbs", []), ("map", "map", [])):
        code, out, cfg = steps[name]
        again = tmp_path / name
        assert run([cmd, "--config", str(cfg), "--out", str(again), *extra]) == 0
        a, b = outputs(out), outputs(again)
        if name == "npl":
            # worker count is recorded in the manifest; the draws must not depend on it
            a.pop("manifest.txt"), b.pop("manifest.txt")
        assert a == b, name


def test_simulate_seed_hashes(pipeline, tmp_path):
    _, steps = pipeline
    _, out, cfg = steps["simulate"]
    run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s8"), "--seed", "8"])
    assert nio.file_hash(tmp_path / "s8" / "sinogram.npls") != nio.file_hash(out / "sinogram.npls")


def test_exit_code_config(tmp_path):
    bad = write_cfg(tmp_path / "bad.cfg", width=8, colour="blue")
    assert run(["phantom", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad2 = write_cfg(tmp_path / "bad2.cfg", width="eight")
    assert run(["phantom", "--config", str(bad2), "--out", str(tmp_path)]) == 2
    assert run(["phantom", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    assert run(["phantom", "--config", str(bad2), "--seed", "-1", "--out", str(tmp_path)]) == 2
    ok = write_cfg(tmp_path / "ok.cfg", width=8)
    assert run(["simulate", "--config", str(ok), "--out", str(tmp_path)]) == 2  # design_file missing


def test_exit_code_data(tmp_path, pipeline):
    _, steps = pipeline
    _, ph, _ = steps["phantom"]
    cfg = write_cfg(tmp_path / "c.cfg", width=8, design_file=tmp_path / "nope.npld", phantom_file=ph / "phantom.npli")
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    (tmp_path / "junk.npld").write_bytes(b"NOPE" + bytes(20))
    cfg = write_cfg(tmp_path / "d.cfg", width=8, design_file=tmp_path / "junk.npld", phantom_file=ph / "phantom.npli")
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    # grid mismatch between config and stored image
    _, de, _ = steps["project"]
    cfg = write_cfg(tmp_path / "e.cfg", width=6, design_file=de / "design.npld", phantom_file=ph / "phantom.npli")
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_exit_code_numeric(tmp_path, pipeline):
    _, steps = pipeline
    _, _, scfg = steps["simulate"]
    kv = nio.parse_kv(scfg.read_text())
    cfg = write_cfg(tmp_path / "n.cfg", **kv, sinogram_file=steps["simulate"][1] / "sinogram.npls",
                    rho=0.0, B=2, beta="inf")
    assert run(["npl", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_misspec_table(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "m.cfg", n_starts=5)
    assert run(["misspec", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "analytic minimum" in text
    with open(tmp_path / "counterexample.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 7
    for r in rows:
        assert float(r["objective"]) == pytest.approx(MIN_VALUE, abs=1e-6)


def test_config_parse_defaults_and_hash():
    a = RunConfig.parse("width=8\n")
    b = RunConfig.parse("# same\nwidth = 8\n")
    assert a.hash == b.hash and a["t"] == 1.0
    assert RunConfig.parse("width=9\n").hash != a.hash
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.parse("widht=8\n")

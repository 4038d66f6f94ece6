import pytest

from flixlab.config import ConfigError, build_config, load_config, parse_config


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_with_comments(tmp_path):
    cfg = load_config(write(tmp_path, "# header\nrun.seed = 4  # inline\n\nalpha.grid = 0.1, 0.5,1\nrun.algorithm=diana\n"))
    assert cfg.seed == 4 and cfg.alpha_grid == [0.1, 0.5, 1.0] and cfg.algorithm == "diana"
    assert cfg.rounds == 10000


def test_default_rounds():
    assert build_config({"run.seed": 0}).rounds == 2000
    assert build_config({"run.seed": 0, "run.algorithm": "dcgd"}).rounds == 10000
    assert build_config({"run.seed": 0, "run.K": 7}).rounds == 7


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("run.seed = 1\nrun.sede = 2\n", "unknown key"),
        ("run.seed = 1\nrun.seed = 2\n", "duplicate"),
        ("run.seed = x\n", "bad value"),
        ("run.seed = 1\njunk\n", "expected"),
        ("problem.n = 3\n", "seed"),
        ("run.seed = 1\nproblem.lam = -0.1\n", "lam"),
        ("run.seed = 1\nalpha.beta = 0.5\nalpha.grid = 0.1,0.2\n", "one alpha policy"),
        ("run.seed = 1\nalpha.grid = ,\n", "bad value"),
        ("run.seed = 1\nalpha.grid = 0.5, 1.5\n", "[0, 1]"),
        ("run.seed = 1\nproblem.n = 3\nalpha.values = 0.1, 0.2\n", "needs 3"),
        ("run.seed = 1\nproblem.source = libsvm\nproblem.path = nowhere.txt\n", "not found"),
        ("run.seed = 1\nrun.algorithm = sgd\n", "run.algorithm"),
        ("run.seed = 1\ncompressor.kind = rand_k\n", "compressor.k"),
        ("run.seed = 1\nrun.stepsize = -2\n", "bad value"),
    ],
)
def test_errors(tmp_path, text, fragment):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, text))
    assert fragment in str(info.value)


def test_paths_resolve_next_to_config(tmp_path):
    (tmp_path / "d.txt").write_text("1 1:1\n-1 1:2\n")
    cfg = load_config(write(tmp_path, "run.seed = 1\nproblem.source = libsvm\nproblem.path = d.txt\nproblem.n = 2\n"))
    assert cfg.resolved_path() == tmp_path / "d.txt"


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, "run.seed = 1\noutput.dir = a\n"), seed_override=9, out_override="b")
    assert (cfg.seed, cfg.out_dir) == (9, "b")


def test_fingerprint_tracks_problem_only():
    a = build_config(parse_config("run.seed = 1\nrun.K = 5\n"))
    b = build_config(parse_config("run.seed = 1\nrun.K = 50\nalpha.beta = 0.9\n"))
    c = build_config(parse_config("run.seed = 2\n"))
    assert a.problem_fingerprint() == b.problem_fingerprint() != c.problem_fingerprint()

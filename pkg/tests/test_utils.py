import threading

import pytest

from utils.errors import ConfigError, ShapeError
from utils.utils import (
    check_artifact,
    derive_seed,
    output_root,
    run_indexed_jobs,
    stable_hash,
    timed,
    worker_count,
)


def test_worker_count_respects_env_cap(monkeypatch):
    assert worker_count(8) == 8
    monkeypatch.setenv("NOPT_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("NOPT_THREADS", "0")
    assert worker_count(8) == 1


def test_worker_count_rejects_garbage(monkeypatch):
    monkeypatch.setenv("NOPT_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count()


def test_output_root_precedence(monkeypatch, tmp_path):
    assert output_root(str(tmp_path / "explicit")) == tmp_path / "explicit"
    monkeypatch.setenv("NOPT_OUTPUT_DIR", str(tmp_path / "env"))
    assert output_root() == tmp_path / "env"


def test_derive_seed_is_pure_and_key_sensitive():
    assert derive_seed(1, "mask", 3) == derive_seed(1, "mask", 3)
    assert derive_seed(1, "mask", 3) != derive_seed(1, "mask", 4)
    assert derive_seed(1, "mask") != derive_seed(2, "mask")
    assert 0 <= derive_seed(123, "x") < 2 ** 63


def test_stable_hash_ignores_key_order():
    assert stable_hash({"a": 1, "b": [1, 2]}) == stable_hash({"b": [1, 2], "a": 1})
    assert stable_hash({"a": 1}) != stable_hash({"a": 2})


def test_run_indexed_jobs_keeps_index_order():
    seen = set()
    lock = threading.Lock()

    def work(x):
        with lock:
            seen.add(threading.get_ident())
        return x * x

    assert run_indexed_jobs(work, list(range(20)), max_workers=4) == [x * x for x in range(20)]
    assert run_indexed_jobs(work, [], max_workers=4) == []


def test_run_indexed_jobs_raises_lowest_failing_index():
    def work(x):
        if x in (3, 7):
            raise ShapeError(f"bad {x}")
        return x

    with pytest.raises(ShapeError, match="bad 3"):
        run_indexed_jobs(work, list(range(10)), max_workers=4)


def test_timed_reports_elapsed():
    with timed() as elapsed:
        sum(range(1000))
    assert elapsed[0] >= 0.0


def test_check_artifact(tmp_path):
    ok, reason = check_artifact(tmp_path / "missing", "checkpoint")
    assert not ok and "checkpoint not found" in reason
    (tmp_path / "there").write_text("x")
    ok, path = check_artifact(tmp_path / "there")
    assert ok and path.exists()

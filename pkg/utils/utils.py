import concurrent.futures
import hashlib
import json
import logging
import os
import platform
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Iterator, List, Sequence, Tuple

from dotenv import load_dotenv

from utils.constant import DEFAULT_OUTPUT_DIR, ENV_OUTPUT_DIR, ENV_THREADS, MAX_WORKERS_NUMBER
from utils.errors import ConfigError

load_dotenv()


def worker_count(requested: int | None = None) -> int:
    """
    返回线程池大小 (Worker pool size), capped by NOPT_THREADS.

    Args:
        requested (int | None): Caller preference, defaults to MAX_WORKERS_NUMBER.

    Returns:
        int: At least 1.
    """
    count = requested if requested is not None else MAX_WORKERS_NUMBER
    cap = os.getenv(ENV_THREADS)
    if cap:
        try:
            count = min(count, int(cap))
        except ValueError as e:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got '{cap}'") from e
    return max(1, count)


def output_root(configured: str | None = None) -> Path:
    """Output directory: explicit value, then NOPT_OUTPUT_DIR, then the default."""
    return Path(configured or os.getenv(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR)


def derive_seed(seed: int, *keys: Any) -> int:
    """
    Derives an independent 63-bit seed from a base seed and any number of keys.

    The result depends only on its arguments, never on call order, which is
    what makes per-sample generation independent of the worker count.
    """
    text = ":".join([str(int(seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def stable_hash(obj: Any) -> str:
    """SHA-256 of the canonical JSON form; invariant to dict key order."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def host_descriptor() -> str:
    return f"{platform.node() or 'unknown'}/{platform.machine()}/{os.cpu_count()}cpu/py{platform.python_version()}"


@contextmanager
def timed() -> Iterator[List[float]]:
    """Yields a one-element list that receives the elapsed wall time in seconds."""
    elapsed = [0.0]
    start = time.perf_counter()
    try:
        yield elapsed
    finally:
        elapsed[0] = time.perf_counter() - start


def run_indexed_jobs(
    fn: Callable[[Any], Any],
    items: Sequence[Any],
    max_workers: int | None = None,
    label: str = "job",
) -> list:
    """
    并发运行任务并按索引顺序返回结果。
    Runs fn over items concurrently; results come back in index order.

    Every job runs to completion; the first failure by index is re-raised
    afterwards so the caller sees a deterministic error.
    """
    workers = worker_count(max_workers)
    results = [None] * len(items)
    errors: dict = {}

    if workers == 1 or len(items) <= 1:
        for i, item in enumerate(items):
            results[i] = fn(item)
        return results

    logging.debug(f"Starting {len(items)} {label}s with {workers} workers...")
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_index = {executor.submit(fn, item): i for i, item in enumerate(items)}

        for future in concurrent.futures.as_completed(future_to_index):
            index = future_to_index[future]
            try:
                results[index] = future.result()
            except Exception as exc:
                logging.error(f"{label} {index} failed: {exc}")
                errors[index] = exc

    if errors:
        raise errors[min(errors)]
    return results


def check_artifact(path: str | Path, what: str = "artifact") -> Tuple[bool, object]:
    """
    检查上游产物是否存在 (Checks an upstream artifact).

    Returns:
        Tuple[bool, object]: (True, resolved Path) or (False, reason string).
    """
    p = Path(path)
    if not p.exists():
        return False, f"{what} not found: {p}"
    return True, p.resolve()

import logging
from contextlib import asynccontextmanager
from dataclasses import asdict
from typing import AsyncGenerator, Optional, Dict, Any, List

from fastmcp import FastMCP, Context

from cli.cli_config import apply_overrides, load_config
from cli.cli_pipeline import Pipeline
from utils.errors import NoptError
from utils.utils import worker_count

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

SuccessResponse = Dict[str, Any]
ErrorResponse = Dict[str, str]

STAGES = ("pretrain", "finetune", "eval", "icl", "sweep", "report")


# 1. Lifespan 管理器: 服务器启动和关闭时记录日志
@asynccontextmanager
async def lifespan(mcp: Context) -> AsyncGenerator[None, None]:
    logging.info("nopt MCP Server is starting up...")
    yield
    logging.info("nopt MCP Server is shutting down...")


# 2. 实例化 FastMCP; 工具的 schema 由函数签名和文档字符串生成
mcp = FastMCP(
    "nopt",
    lifespan=lifespan,
)


def _pipeline(config_path: Optional[str], pde: Optional[str], force: bool = False) -> Pipeline:
    config = load_config(config_path)
    if pde is not None and pde != config.pde.name:
        config = apply_overrides(config, {"pde.name": pde, "pde.ranges": {}})
    return Pipeline(config, force=force, max_workers=worker_count())


def _failure(what: str, e: Exception) -> ErrorResponse:
    error_msg = f"{what} failed: {e}"
    logging.error(error_msg, exc_info=not isinstance(e, NoptError))
    return {"status": "failure", "reason": error_msg}


def generate_dataset_sync(pde: str, n: int, kind: str = "labeled", seed: int = 1,
                          config_path: Optional[str] = None) -> Dict[str, Any]:
    """Plain-function body of the generate_dataset tool."""
    try:
        result = _pipeline(config_path, pde).generate(kind, n=n, seed=seed)
        response: SuccessResponse = {"status": "success"}
        response.update(asdict(result))
        return response
    except Exception as e:
        return _failure(f"generating {n} {kind} samples of {pde}", e)


def simulation_cost_sync(pde: str, n: int = 50, seed: int = 1,
                         config_path: Optional[str] = None) -> Dict[str, Any]:
    try:
        result = _pipeline(config_path, pde).cost(n, seed)
        response: SuccessResponse = {"status": "success"}
        response.update(asdict(result))
        return response
    except Exception as e:
        return _failure(f"timing {pde} generation", e)


def run_stage_sync(stage: str, config_path: Optional[str] = None, checkpoint: Optional[str] = None,
                   grid: Optional[List[str]] = None, force: bool = False) -> Dict[str, Any]:
    if stage not in STAGES:
        return {"status": "failure", "reason": f"stage must be one of {', '.join(STAGES)}, got '{stage}'"}
    try:
        pipeline = _pipeline(config_path, None, force)
        match stage:
            case "pretrain":
                result = pipeline.pretrain()
            case "finetune":
                result = pipeline.finetune(checkpoint=checkpoint)
            case "eval":
                if checkpoint is None:
                    return {"status": "failure", "reason": "eval needs a checkpoint"}
                return {"status": "success", **pipeline.evaluate(checkpoint)}
            case "icl":
                result = pipeline.icl(checkpoint)
            case "sweep":
                result = pipeline.sweep(grid or [])
            case _:
                result = pipeline.report()
        response: SuccessResponse = {"status": "success"}
        response.update(asdict(result))
        return response
    except Exception as e:
        return _failure(f"stage {stage}", e)


@mcp.tool()
async def generate_dataset(pde: str, n: int, kind: str = "labeled", seed: int = 1,
                           config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Generates a PDE dataset (inputs, and solutions when labeled) under the output directory.

    Args:
        pde (str): One of poisson, helmholtz, rd, ns.
        n (int): Number of samples.
        kind (str): labeled (training range), unlabeled (pretraining range, no solver),
            ood or pool (out-of-distribution range, labeled).
        seed (int): Generation seed.
        config_path (str | None): Optional TOML experiment document.

    Returns:
        On success: {"status": "success", "stage", "skipped", "artifacts", "summary"}.
        On failure: {"status": "failure", "reason": ...}.
    """
    return generate_dataset_sync(pde, n, kind, seed, config_path)


@mcp.tool()
async def simulation_cost(pde: str, n: int = 50, seed: int = 1,
                          config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Times labeled against unlabeled generation of n samples and appends a row to cost/cost.csv.

    Returns:
        On success: {"status": "success", ..., "summary": {"labeled_secs", "unlabeled_secs", ...}}.
        On failure: {"status": "failure", "reason": ...}.
    """
    return simulation_cost_sync(pde, n, seed, config_path)


@mcp.tool()
async def run_stage(stage: str, config_path: Optional[str] = None, checkpoint: Optional[str] = None,
                    grid: Optional[List[str]] = None, force: bool = False) -> Dict[str, Any]:
    """
    Runs one experiment stage over a config file, skipping work already in the run ledger.

    Args:
        stage (str): pretrain, finetune, eval, icl, sweep or report.
        config_path (str | None): TOML experiment document; defaults when omitted.
        checkpoint (str | None): Checkpoint directory for finetune, eval and icl.
        grid (list[str] | None): Sweep axes such as "mask=0,0.3,0.7" and "blur=0:0,0:1".
        force (bool): Rerun stages already recorded.

    Returns:
        On success: {"status": "success", ...}. On failure: {"status": "failure", "reason": ...}.
    """
    return run_stage_sync(stage, config_path, checkpoint, grid, force)


# 3. 服务器启动入口
def start_server():
    """服务器启动入口点。"""
    try:
        mcp.run()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    start_server()

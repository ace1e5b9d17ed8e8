from .server import mcp
from loguru import logger


def main() -> None:
    logger.info("starting spd calibration server...")
    mcp.run(transport="stdio")

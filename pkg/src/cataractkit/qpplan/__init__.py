from .encoder import EncoderDriver, FrameLog, apply_removal, read_encoder_log, write_encoder_log
from .formats import dumps_binary, dumps_text, loads_binary, loads_text, read_qpmaps, write_qpmaps
from .planner import (CTU, GOP_OFFSETS, I_OFFSET, SCENARIOS, Box, OrientedBox, QPMap, RelevanceInput,
                      allocate_qp, ctu_any, ctu_grid, extract_bbox, frame_types, relevant_ctus,
                      relevant_region)
from .reports import psnr_report, region_psnr, storage_gain, storage_report

__all__ = [
    "EncoderDriver", "FrameLog", "apply_removal", "read_encoder_log", "write_encoder_log",
    "dumps_binary", "dumps_text", "loads_binary", "loads_text", "read_qpmaps", "write_qpmaps",
    "CTU", "GOP_OFFSETS", "I_OFFSET", "SCENARIOS", "Box", "OrientedBox", "QPMap", "RelevanceInput",
    "allocate_qp", "ctu_any", "ctu_grid", "extract_bbox", "frame_types", "relevant_ctus",
    "relevant_region", "psnr_report", "region_psnr", "storage_gain", "storage_report",
]

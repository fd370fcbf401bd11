"""Toy-scale U-Net training over auto-labeled sea-ice tiles."""

from .data import (CLASS_COLORS, cut_tiles, decode_labels, encode_labels,
                   load_pairs, load_run, read_png, stitch_tiles,
                   train_val_split, write_png)
from .infer import infer_dir, infer_mask, load_model, save_model
from .model import DROPOUT_CHOICES, UNet, UNetSpec
from .train import (BATCH_CHOICES, TABLE_COLUMNS, TrainConfig, TrainResult,
                    synchronized_step, table_csv, throughput_table, train,
                    train_distributed)

__all__ = [
    "CLASS_COLORS", "cut_tiles", "decode_labels", "encode_labels",
    "load_pairs", "load_run", "read_png", "stitch_tiles", "train_val_split",
    "write_png", "infer_dir", "infer_mask", "load_model", "save_model",
    "DROPOUT_CHOICES", "UNet", "UNetSpec", "BATCH_CHOICES", "TABLE_COLUMNS",
    "TrainConfig", "TrainResult", "synchronized_step", "table_csv",
    "throughput_table", "train", "train_distributed",
]

"""Published architecture and result tables, encoded as data.

Rows are ``(block, operation, activation, "CxHxW")``. Operation names are
normalized: ``Concat/phi_simple`` for the combine function, and the last
critic block's 4x1-reducing convolution is listed as ``Conv 4x4`` (the
published table prints it as "Conv 3x4", which cannot produce 1x1 output from
4x4 input without padding tricks).
"""

from __future__ import annotations

GENERATOR_TABLE = [
    (1, "Latent vector", "Norm", "512x1x1"),
    (1, "Conv 4x4", "LReLU", "512x4x4"),
    (1, "Conv 3x3", "LReLU", "512x4x4"),
    (2, "Upsample", "-", "512x8x8"),
    (2, "Conv 3x3", "LReLU", "512x8x8"),
    (2, "Conv 3x3", "LReLU", "512x8x8"),
    (3, "Upsample", "-", "512x16x16"),
    (3, "Conv 3x3", "LReLU", "512x16x16"),
    (3, "Conv 3x3", "LReLU", "512x16x16"),
    (4, "Upsample", "-", "512x32x32"),
    (4, "Conv 3x3", "LReLU", "512x32x32"),
    (4, "Conv 3x3", "LReLU", "512x32x32"),
    (5, "Upsample", "-", "512x64x64"),
    (5, "Conv 3x3", "LReLU", "256x64x64"),
    (5, "Conv 3x3", "LReLU", "256x64x64"),
    (6, "Upsample", "-", "256x128x128"),
    (6, "Conv 3x3", "LReLU", "128x128x128"),
    (6, "Conv 3x3", "LReLU", "128x128x128"),
    (7, "Upsample", "-", "128x256x256"),
    (7, "Conv 3x3", "LReLU", "64x256x256"),
    (7, "Conv 3x3", "LReLU", "64x256x256"),
    (8, "Upsample", "-", "64x512x512"),
    (8, "Conv 3x3", "LReLU", "32x512x512"),
    (8, "Conv 3x3", "LReLU", "32x512x512"),
    (9, "Upsample", "-", "32x1024x1024"),
    (9, "Conv 3x3", "LReLU", "16x1024x1024"),
    (9, "Conv 3x3", "LReLU", "16x1024x1024"),
]

DISCRIMINATOR_TABLE = [
    (1, "Raw RGB images 0", "-", "3x1024x1024"),
    (1, "FromRGB", "-", "16x1024x1024"),
    (1, "MiniBatchStd", "-", "17x1024x1024"),
    (1, "Conv 3x3", "LReLU", "16x1024x1024"),
    (1, "Conv 3x3", "LReLU", "32x1024x1024"),
    (1, "AvgPool", "-", "32x512x512"),
    (2, "Raw RGB images 1", "-", "3x512x512"),
    (2, "Concat/phi_simple", "-", "35x512x512"),
    (2, "MiniBatchStd", "-", "36x512x512"),
    (2, "Conv 3x3", "LReLU", "32x512x512"),
    (2, "Conv 3x3", "LReLU", "64x512x512"),
    (2, "AvgPool", "-", "64x256x256"),
    (3, "Raw RGB images 2", "-", "3x256x256"),
    (3, "Concat/phi_simple", "-", "67x256x256"),
    (3, "MiniBatchStd", "-", "68x256x256"),
    (3, "Conv 3x3", "LReLU", "64x256x256"),
    (3, "Conv 3x3", "LReLU", "128x256x256"),
    (3, "AvgPool", "-", "128x128x128"),
    (4, "Raw RGB images 3", "-", "3x128x128"),
    (4, "Concat/phi_simple", "-", "131x128x128"),
    (4, "MiniBatchStd", "-", "132x128x128"),
    (4, "Conv 3x3", "LReLU", "128x128x128"),
    (4, "Conv 3x3", "LReLU", "256x128x128"),
    (4, "AvgPool", "-", "256x64x64"),
    (5, "Raw RGB images 4", "-", "3x64x64"),
    (5, "Concat/phi_simple", "-", "259x64x64"),
    (5, "MiniBatchStd", "-", "260x64x64"),
    (5, "Conv 3x3", "LReLU", "256x64x64"),
    (5, "Conv 3x3", "LReLU", "512x64x64"),
    (5, "AvgPool", "-", "512x32x32"),
    (6, "Raw RGB images 5", "-", "3x32x32"),
    (6, "Concat/phi_simple", "-", "515x32x32"),
    (6, "MiniBatchStd", "-", "516x32x32"),
    (6, "Conv 3x3", "LReLU", "512x32x32"),
    (6, "Conv 3x3", "LReLU", "512x32x32"),
    (6, "AvgPool", "-", "512x16x16"),
    (7, "Raw RGB images 6", "-", "3x16x16"),
    (7, "Concat/phi_simple", "-", "515x16x16"),
    (7, "MiniBatchStd", "-", "516x16x16"),
    (7, "Conv 3x3", "LReLU", "512x16x16"),
    (7, "Conv 3x3", "LReLU", "512x16x16"),
    (7, "AvgPool", "-", "512x8x8"),
    (8, "Raw RGB images 7", "-", "3x8x8"),
    (8, "Concat/phi_simple", "-", "515x8x8"),
    (8, "MiniBatchStd", "-", "516x8x8"),
    (8, "Conv 3x3", "LReLU", "512x8x8"),
    (8, "Conv 3x3", "LReLU", "512x8x8"),
    (8, "AvgPool", "-", "512x4x4"),
    (9, "Raw RGB images 8", "-", "3x4x4"),
    (9, "Concat/phi_simple", "-", "515x4x4"),
    (9, "MiniBatchStd", "-", "516x4x4"),
    (9, "Conv 3x3", "LReLU", "512x4x4"),
    (9, "Conv 4x4", "LReLU", "512x1x1"),
    (9, "Fully Connected", "Linear", "1x1x1"),
]

# Train/Test data, accuracy, precision, recall, F1.
SCENARIO_REFERENCE = [
    ("Real/Real", 0.84, 0.84, 0.84, 0.84),
    ("Synthetic/Synthetic", 0.99, 0.98, 0.98, 0.98),
    ("Real/Synthetic", 0.81, 0.82, 0.78, 0.78),
    ("Synthetic/Real", 0.76, 0.77, 0.76, 0.76),
]

FULL_DEPTH = 9


def _dims(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split("x"))


def expected_generator_rows(depth: int) -> list[tuple]:
    return [row for row in GENERATOR_TABLE if row[0] <= depth]


def expected_discriminator_rows(depth: int) -> list[tuple]:
    """Critic rows for the last ``depth`` blocks.

    Below full depth the entry block has no incoming features: its Concat row
    becomes a FromRGB row producing the same feature channels the finer block
    would have delivered, and MiniBatchStd adds one channel to that.
    """
    first = FULL_DEPTH - depth + 1
    rows = [row for row in DISCRIMINATOR_TABLE if row[0] >= first]
    if depth == FULL_DEPTH:
        return rows
    out = []
    for block, op, act, shape in rows:
        if block == first and op.startswith("Concat"):
            c, h, w = _dims(shape)
            out.append((block, "FromRGB", "-", f"{c - 3}x{h}x{w}"))
        elif block == first and op == "MiniBatchStd":
            c, h, w = _dims(shape)
            out.append((block, op, act, f"{c - 3}x{h}x{w}"))
        else:
            out.append((block, op, act, shape))
    return out

"""Build the bundled MNIST subset (IDX format) from the `mnist` npm package.

The npm package ships ~1000 digits per class as JSON arrays of pixels scaled
to [0, 1] with three decimals. Rounding back through 255 recovers the raw
bytes. The first 200 digits of each class go to the training split and the
next 100 to the test split; each split is then shuffled with a fixed seed.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist-subset
"""

import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 100


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, 0x08, 3))
        f.write(struct.pack(">III", len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, 0x08, 1))
        f.write(struct.pack(">I", len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(flat) // 784
        assert count >= TRAIN_PER_CLASS + TEST_PER_CLASS
        for k in range(TRAIN_PER_CLASS + TEST_PER_CLASS):
            px = [min(255, max(0, round(v * 255))) for v in flat[k * 784:(k + 1) * 784]]
            (train if k < TRAIN_PER_CLASS else test).append((px, digit))
    rng = random.Random(20180710)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("t10k", test)):
        write_idx_images(dst / f"{name}-images-idx3-ubyte", [p for p, _ in split])
        write_idx_labels(dst / f"{name}-labels-idx1-ubyte", [y for _, y in split])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

"""Smoke test for the `cellseg` extension module.

Build and run:
    cargo build --release -p cellseg-py --features extension-module
    cp target/release/libcellseg.so python/cellseg.so
    python3 python/smoke_test.py
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cellseg  # noqa: E402


def square_mask(size, top, left, side, label=1):
    rows = [[0] * size for _ in range(size)]
    for r in range(top, top + side):
        for c in range(left, left + side):
            rows[r][c] = label
    return rows


def main():
    labels = square_mask(20, 7, 7, 6)
    target = cellseg.build_tertiary(labels)
    assert sum(v == 2 for row in target for v in row) == 36
    assert any(v == 1 for row in target for v in row)

    instances = cellseg.label_instances(target)
    assert max(max(row) for row in instances) == 1

    assert cellseg.seg_score(labels, labels) == 1.0
    empty = [[0] * 20 for _ in range(20)]
    assert cellseg.seg_score(labels, empty) == 0.0
    assert cellseg.seg_score(empty, labels) is None

    assert cellseg.lr_at("cosine", 2e-4, 1e-6, 100, 0) == 2e-4
    assert abs(cellseg.lr_at("cosine", 2e-4, 1e-6, 100, 100) - 1e-6) < 1e-15
    assert cellseg.lr_at("cosine_warm_restarts", 2e-4, 1e-6, 1000, 100, [100, 300, 700]) == 2e-4

    events = cellseg.scheme_events("Acc", 3, 8)
    assert events == [0, 1, 2, None, 0, 1, 2, None], events

    image = [[0.5] * 20 for _ in range(20)]
    moved = square_mask(20, 8, 8, 6, label=4)
    assert cellseg.match_frames(labels, image, moved, image) == [(1, 4)]

    try:
        cellseg.build_tertiary([[0, 1], [0]])
    except ValueError:
        pass
    else:
        raise AssertionError("ragged input accepted")

    with tempfile.TemporaryDirectory() as tmp:
        names = cellseg.synthetic_corpus(os.path.join(tmp, "data"), 3)
        assert len(names) == 4
        config = f"""
version = 1
seed = 1
scheme = "Acc"
datasets = {names!r}
epochs = 1
draws_per_dataset = 2
validation_period = 1
[loader]
crop_size = 32
batch_size = 2
pad = 0
[model]
norm = "groupnorm"
""".replace("'", '"')
        best = cellseg.train(config, os.path.join(tmp, "data"), os.path.join(tmp, "run"))
        assert best is None or 0.0 <= best <= 1.0
        seg = cellseg.Segmenter(os.path.join(tmp, "run", "best.ckpt"))
        mask = seg.segment([[0.1] * 24 for _ in range(20)])
        assert len(mask) == 20 and len(mask[0]) == 24
        assert seg.parameter_count() > 0

    print("python smoke test passed")


if __name__ == "__main__":
    main()

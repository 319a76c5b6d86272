#!/usr/bin/env python3
"""Smoke test for the attrib_rs extension module.

Builds are produced with `cargo build -p attrib-py` (add --release for
the optimized library); this script locates the compiled cdylib, makes
it importable, and exercises the main entry points.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_extension():
    candidates = [
        REPO / "target" / "release" / "libattrib_rs.so",
        REPO / "target" / "debug" / "libattrib_rs.so",
        REPO / "target" / "release" / "libattrib_rs.dylib",
        REPO / "target" / "debug" / "libattrib_rs.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("attrib_rs not built; run `cargo build -p attrib-py` first")
    stage = Path(tempfile.mkdtemp(prefix="attrib_rs_"))
    shutil.copy(built, stage / "attrib_rs.so")
    sys.path.insert(0, str(stage))
    import attrib_rs

    return attrib_rs


def main():
    rs = import_extension()

    # Cross-entropy: uniform logits give ln(C).
    loss, grad = rs.cross_entropy([[0.0, 0.0, 0.0]], [0])
    assert abs(loss - math.log(3)) < 1e-12, loss
    assert len(grad) == 1 and len(grad[0]) == 3
    print(f"cross_entropy uniform -> ln 3: PASS ({loss:.6f})")

    # Contrastive hand case: two aligned unit vectors, one orthogonal.
    z = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    loss, grad = rs.supervised_contrastive(z, [0, 0, 1], tau=1.0, normalize=False)
    expected = 2 * math.log(1 + math.exp(-1))
    assert abs(loss - expected) < 1e-9, loss
    print(f"supervised_contrastive hand case: PASS ({loss:.6f})")

    # Table metrics reproduce printed values.
    assert abs(rs.actual_difference(59.70, 54.14) - 5.56) <= 0.01
    assert abs(rs.improvement_percentage(59.70, 54.14) - 10.26) <= 0.02
    assert abs(rs.improvement_percentage(38.85, 26.75) - 45.23) <= 0.02
    print("actual_difference / improvement_percentage: PASS")

    # Synthetic data -> train -> evaluate, twice for determinism.
    with tempfile.TemporaryDirectory() as tmp:
        data = str(Path(tmp) / "synthetic.jsonl")
        n = rs.synthesize_dataset(data, seed=5, train_n=60, val_n=15, test_n=15, dim=16)
        assert n == 3 * 90, n
        runs = [
            rs.train_eval(
                data,
                sources=["P", "R"],
                targets=["O"],
                epochs=3,
                batch_size=16,
                lr=0.01,
                proj_dim=8,
                seed=2,
            )
            for _ in range(2)
        ]
        for report in runs:
            assert 0.0 <= report["in_domain"] <= 100.0
            assert set(report["per_target"]) == {"O"}
            assert report["ood_avg"] is not None
            assert len(report["history"]) == 3
        assert runs[0] == runs[1], "training not deterministic"
        print(
            "train_eval on synthetic data: PASS "
            f"(in-domain {runs[0]['in_domain']:.1f}%, OOD {runs[0]['ood_avg']:.1f}%)"
        )

    # t-SNE on two tight clusters.
    pts = [[float(i % 2) * 8 + 0.01 * i, float(i % 2) * 8 - 0.01 * i] for i in range(20)]
    coords = rs.tsne(pts, perplexity=4.0, iterations=300, learning_rate=20.0, seed=1)
    assert len(coords) == 20 and all(len(c) == 2 for c in coords)
    assert all(math.isfinite(v) for c in coords for v in c)
    print("tsne: PASS")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()

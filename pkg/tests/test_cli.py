import subprocess
import sys

import numpy as np
import pytest

from sfcpoint import io
from sfcpoint.attention import AttentionParams, LayerParams, XCPEParams, patch_attention
from sfcpoint.cli import main
from sfcpoint.cloud import WAYMO_BOX, PointCloud
from sfcpoint.multiframe import retention_report


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def keyvals(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


class TestGen:
    def test_deterministic_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a.spc", tmp_path / "b.spc"
        for path in (a, b):
            assert run(capsys, "gen", path, "-n", 500, "--seed", 9, "--generator", "ring-road")[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert int.from_bytes(a.read_bytes()[4:8], "little") == 500

    def test_ring_road_retention(self, tmp_path, capsys):
        path = tmp_path / "r.spc"
        run(capsys, "gen", path, "-n", 10000, "--generator", "ring-road",
            "--distant-fraction", 0.1, "--seed", 1)
        cloud, _ = io.read_spc(path)
        # 3-sigma binomial band around 0.9 for n = 10000.
        assert abs(retention_report(cloud, WAYMO_BOX).retained - 0.9) <= 3 * np.sqrt(0.09 / 10000)

    @pytest.mark.parametrize("generator", ["uniform-box", "gaussian-clusters"])
    def test_other_generators(self, tmp_path, capsys, generator):
        path = tmp_path / "g.spc"
        assert run(capsys, "gen", path, "-n", 100, "--generator", generator)[0] == 0
        cloud, _ = io.read_spc(path)
        assert len(cloud) == 100 and cloud.labels.max() < 4


class TestSerialize:
    def test_single_point(self, tmp_path, capsys):
        path = tmp_path / "one.spc"
        io.write_spc(path, PointCloud([[1.0, 2.0, 3.0]]))
        order = tmp_path / "order.txt"
        code, out, _ = run(capsys, "serialize", path, "--order-out", order)
        assert code == 0
        assert order.read_text() == "0\n"
        assert keyvals(out)["points"] == "1"

    def test_hilbert_beats_random(self, tmp_path, capsys):
        path = tmp_path / "u.spc"
        run(capsys, "gen", path, "-n", 20000, "--extent", 1.6, "--seed", 2)
        code, out, _ = run(capsys, "serialize", path, "--pattern", "hilbert")
        assert code == 0
        assert float(keyvals(out)["ratio"]) < 0.5

    def test_z_on_axis_points_is_identity(self, tmp_path, capsys):
        path = tmp_path / "line.spc"
        io.write_spc(path, PointCloud([[i * 0.1, 0.0, 0.0] for i in range(50)]))
        order = tmp_path / "order.txt"
        run(capsys, "serialize", path, "--pattern", "z", "--order-out", order)
        assert order.read_text().split() == [str(i) for i in range(50)]


class TestBench:
    def test_report(self, tmp_path, capsys):
        path = tmp_path / "u.spc"
        run(capsys, "gen", path, "-n", 5000)
        reports = []
        for _ in range(2):
            code, out, _ = run(capsys, "bench", path, "--patch", 256)
            assert code == 0
            reports.append(keyvals(out))
        for stage in ("encode", "sort", "partition"):
            assert float(reports[0][f"{stage}_seconds"]) > 0
            assert f"{stage}_points_per_second" in reports[0]
        for key in ("points", "patches", "padded", "order_digest"):
            assert reports[0][key] == reports[1][key]
        assert reports[0]["padded"] == str(20 * 256)


class TestForward:
    def make(self, tmp_path, n=64, d=4, layers=None):
        rng = np.random.default_rng(0)
        cells = rng.choice(16**3, size=n, replace=False)
        g = np.stack(np.unravel_index(cells, (16,) * 3), axis=1)
        cloud = PointCloud((g + 0.5) * 0.05, rng.normal(size=(n, d)))
        spc, spw = tmp_path / "in.spc", tmp_path / "p.spw"
        io.write_spc(spc, cloud)
        if layers is None:
            io.write_spw(spw, [], num_heads=1)
        else:
            io.write_spw(spw, layers)
        return io.read_spc(spc)[0], spc, spw

    def test_depth_zero_passthrough(self, tmp_path, capsys):
        cloud, spc, spw = self.make(tmp_path)
        out = tmp_path / "out.spc"
        assert run(capsys, "forward", spc, spw, out)[0] == 0
        assert io.read_spc(out)[0].features.tolist() == cloud.features.tolist()

    def test_zero_kernel_single_patch(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(4, 4, 4)).astype(np.float32).astype(np.float64)
        layer = LayerParams(AttentionParams(*w, num_heads=2), XCPEParams.zeros(4))
        cloud, spc, spw = self.make(tmp_path, layers=[layer])
        out = tmp_path / "out.spc"
        assert run(capsys, "forward", spc, spw, out, "--patch", 64)[0] == 0
        expected = patch_attention(cloud.features, layer.attention)
        assert np.abs(io.read_spc(out)[0].features - expected).max() <= 1e-5

    def test_permuted_input(self, tmp_path, capsys):
        from sfcpoint.attention import random_layers
        cloud, spc, spw = self.make(tmp_path, n=120, layers=random_layers(4, 1, 3, seed=4))
        perm = np.random.default_rng(2).permutation(120)
        spc2 = tmp_path / "perm.spc"
        io.write_spc(spc2, cloud.take(perm))
        a, b = tmp_path / "a.spc", tmp_path / "b.spc"
        run(capsys, "forward", spc, spw, a, "--patch", 16, "--schedule", "shuffle", "--seed", 5)
        run(capsys, "forward", spc2, spw, b, "--patch", 16, "--schedule", "shuffle", "--seed", 5)
        fa = io.read_spc(a)[0].features
        fb = io.read_spc(b)[0].features
        assert np.array_equal(fb, fa[perm])

    def test_duplicate_cells_error(self, tmp_path, capsys):
        from sfcpoint.attention import random_layers
        spc, spw = tmp_path / "d.spc", tmp_path / "p.spw"
        io.write_spc(spc, PointCloud(np.zeros((4, 3)), np.ones((4, 2))))
        io.write_spw(spw, random_layers(2, 1, 1))
        code, _, err = run(capsys, "forward", spc, spw, tmp_path / "o.spc")
        assert code == 1
        assert err.startswith("error: DuplicateCell: ")
        assert run(capsys, "forward", spc, spw, tmp_path / "o.spc", "--voxelize")[0] == 0


def write_sequence(tmp_path):
    near = lambda n: np.column_stack([np.linspace(-30, 30, n), np.zeros(n), np.zeros(n)])
    far = np.array([[70.0, 0.0, 0.0]] * 5)
    frames = [
        (PointCloud(np.vstack([near(8), far]), np.ones((13, 1)), np.ones(13)), 10.0, 100),
        (PointCloud(near(6), np.ones((6, 1)), np.ones(6)), 5.0, 200),
        (PointCloud(near(10), np.ones((10, 1)), np.zeros(10)), 0.0, 300),
    ]
    lines = []
    for k, (cloud, dx, stamp) in enumerate(frames):
        io.write_spc(tmp_path / f"f{k}.spc", cloud)
        pose = np.eye(4)
        pose[0, 3] = dx
        lines.append(io.format_manifest_line(f"f{k}.spc", pose, stamp))
    manifest = tmp_path / "seq.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


class TestMergeFrames:
    def test_without_clip(self, tmp_path, capsys):
        manifest = write_sequence(tmp_path)
        out = tmp_path / "m.spc"
        code, text, _ = run(capsys, "merge-frames", manifest, out)
        assert code == 0
        merged, _ = io.read_spc(out)
        assert len(merged) == 29
        assert np.bincount(merged.frame_index).tolist() == [10, 6, 13]
        assert keyvals(text)["clip"] == "none"

    def test_with_clip(self, tmp_path, capsys):
        manifest = write_sequence(tmp_path)
        out = tmp_path / "m.spc"
        run(capsys, "merge-frames", manifest, out, "--clip=-75.2,-75.2,-4,75.2,75.2,2")
        merged, _ = io.read_spc(out)
        # The oldest frame's five points at local x=70 land at x=80 and are dropped.
        assert np.bincount(merged.frame_index).tolist() == [10, 6, 8]

    def test_past_limit(self, tmp_path, capsys):
        manifest = write_sequence(tmp_path)
        out = tmp_path / "m.spc"
        run(capsys, "merge-frames", manifest, out, "--past", 1)
        assert len(io.read_spc(out)[0]) == 16


class TestEval:
    def setup(self, tmp_path):
        labels = tmp_path / "labels.spc"
        io.write_spc(labels, PointCloud(np.zeros((4, 3)), labels=[0, 1, 1, 1]))
        a = tmp_path / "a.spl"
        io.write_spl(a, [[1.0, 0.0], [2.0, 1.0], [0.0, 1.0], [0.0, 3.0]])
        return labels, a

    def test_fixture(self, tmp_path, capsys):
        labels, a = self.setup(tmp_path)
        code, out, _ = run(capsys, "eval", "--labels", labels, "--logits", a)
        assert code == 0
        kv = keyvals(out)
        assert abs(float(kv["miou"]) - 7 / 12) <= 1e-12
        assert float(kv["iou_0"]) == 0.5 and abs(float(kv["iou_1"]) - 2 / 3) <= 1e-15
        assert kv["classes"] == "0,1"
        assert "class  iou" in out

    def test_ensemble_identity_and_warning(self, tmp_path, capsys):
        labels, a = self.setup(tmp_path)
        code, out, err = run(capsys, "eval", "--labels", labels, "--logits", a, a, a,
                             "--ensemble", "--split", "val")
        assert code == 0
        assert abs(float(keyvals(out)["miou"]) - 7 / 12) <= 1e-12
        assert err.startswith("warning:")

    def test_multiple_without_flag(self, tmp_path, capsys):
        labels, a = self.setup(tmp_path)
        code, _, err = run(capsys, "eval", "--labels", labels, "--logits", a, a)
        assert code == 1 and err.startswith("error: InvalidArgument: ")

    def test_length_mismatch(self, tmp_path, capsys):
        labels, _ = self.setup(tmp_path)
        b = tmp_path / "b.spl"
        io.write_spl(b, np.zeros((3, 2)))
        code, _, err = run(capsys, "eval", "--labels", labels, "--logits", b)
        assert code == 1 and err.startswith("error: LengthMismatch: ")

    def test_frame_filter(self, tmp_path, capsys):
        labels = tmp_path / "labels.spc"
        io.write_spc(labels, PointCloud(np.zeros((4, 3)), labels=[0, 1, 1, 1],
                                        frame_index=[0, 0, 1, 1]))
        a = tmp_path / "a.spl"
        io.write_spl(a, [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
        code, out, _ = run(capsys, "eval", "--labels", labels, "--logits", a, "--frame-index", 0)
        assert code == 0 and float(keyvals(out)["miou"]) == 1.0


def test_console_script_errors(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "sfcpoint.cli", "serialize", str(tmp_path / "missing.spc")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    assert proc.stderr.startswith("error: IOError: ")


def test_bad_file_reports_format_error(tmp_path, capsys):
    path = tmp_path / "junk.spc"
    path.write_bytes(b"nope")
    code, _, err = run(capsys, "bench", path)
    assert code == 1 and err.startswith("error: FormatError: ")

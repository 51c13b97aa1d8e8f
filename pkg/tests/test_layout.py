from __future__ import annotations

import math

import numpy as np
import pytest

from vidplan.layout import (
    DenseLayout,
    EmptyTrackError,
    box_area,
    box_center,
    dense_layouts_from_doc,
    dense_layouts_to_doc,
    dense_scene_layout,
    fourier_features,
    interpolate_layouts,
    to_center_point_layout,
)
from vidplan.plan import BoundingBox, EntityTrack, Keyframe, SceneSpec, quantize_box

from conftest import linear_track, static_track


def oracle_interpolate(boxes: list[BoundingBox], target: int) -> list[BoundingBox]:
    """Independent piecewise-linear evaluator via np.interp per coordinate."""
    K = len(boxes)
    xs = [k * (target - 1) / (K - 1) for k in range(K)]
    out = []
    coords = np.array([b.as_tuple() for b in boxes])
    per_coord = [np.interp(np.arange(target), xs, coords[:, c]) for c in range(4)]
    for j in range(target):
        out.append(BoundingBox(*(per_coord[c][j] for c in range(4))))
    return out


class TestInterpolation:
    def test_two_keyframe_midpoint(self):
        track = EntityTrack(
            "e", "e", keyframes=[
                Keyframe(0, BoundingBox(0.0, 0.0, 0.2, 0.2)),
                Keyframe(8, BoundingBox(0.8, 0.0, 1.0, 0.2)),
            ],
        )
        out = interpolate_layouts(track, 9)
        assert out[4].x0 == pytest.approx(0.4)

    def test_constant_track_stays_constant(self):
        box = BoundingBox(0.2, 0.2, 0.6, 0.6)
        out = interpolate_layouts(static_track("e", "e", box), 16)
        assert len(out) == 16
        assert all(b == box for b in out)

    def test_endpoints_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            coords = np.sort(rng.uniform(0, 1, size=(9, 2)), axis=1)
            ys = np.sort(rng.uniform(0, 1, size=(9, 2)), axis=1)
            track = EntityTrack(
                "e", "e",
                keyframes=[
                    Keyframe(k, BoundingBox(coords[k, 0], ys[k, 0], coords[k, 1], ys[k, 1]))
                    for k in range(9)
                ],
            )
            out = interpolate_layouts(track, 16)
            assert out[0] == track.keyframes[0].box
            assert out[-1] == track.keyframes[-1].box

    def test_matches_independent_oracle_on_random_tracks(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(1000):
            K = int(rng.integers(2, 10))
            T = int(rng.integers(K, 25))
            boxes = []
            for _ in range(K):
                x = np.sort(rng.uniform(0, 1, 2))
                y = np.sort(rng.uniform(0, 1, 2))
                boxes.append(BoundingBox(x[0], y[0], x[1], y[1]))
            track = EntityTrack("e", "e", keyframes=[Keyframe(k, b) for k, b in enumerate(boxes)])
            ours = interpolate_layouts(track, T)
            ref = oracle_interpolate(boxes, T)
            for a, b in zip(ours, ref):
                worst = max(worst, max(abs(x - y) for x, y in zip(a.as_tuple(), b.as_tuple())))
        assert worst < 1e-12

    def test_monotone_between_adjacent_keyframes(self):
        track = linear_track("e", "e", BoundingBox(0.0, 0.8, 0.2, 1.0), BoundingBox(0.8, 0.0, 1.0, 0.2))
        out = interpolate_layouts(track, 16)
        xs = [b.x0 for b in out]
        assert all(b >= a for a, b in zip(xs, xs[1:]))
        ys = [b.y0 for b in out]
        assert all(b <= a for a, b in zip(ys, ys[1:]))

    def test_interpolated_boxes_stay_ordered(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            boxes = []
            for _ in range(5):
                x = np.sort(rng.uniform(0, 1, 2))
                y = np.sort(rng.uniform(0, 1, 2))
                boxes.append(BoundingBox(x[0], y[0], x[1], y[1]))
            track = EntityTrack("e", "e", keyframes=[Keyframe(k, b) for k, b in enumerate(boxes)])
            assert all(b.is_ordered() for b in interpolate_layouts(track, 31))

    def test_single_keyframe_constant_extension_with_diagnostic(self):
        track = EntityTrack("e", "e", keyframes=[Keyframe(0, BoundingBox(0.1, 0.1, 0.3, 0.3))])
        diags: list[str] = []
        out = interpolate_layouts(track, 16, diagnostics=diags)
        assert len(out) == 16 and len(set(b.as_tuple() for b in out)) == 1
        assert diags

    def test_empty_track_raises(self):
        with pytest.raises(EmptyTrackError):
            interpolate_layouts(EntityTrack("e", "e"), 16)

    def test_target_same_as_keyframes_is_identity(self):
        track = linear_track("e", "e", BoundingBox(0, 0, 0.1, 0.1), BoundingBox(0.9, 0.9, 1, 1), n=9)
        assert interpolate_layouts(track, 9) == track.boxes()


class TestGeometry:
    def test_unit_box(self):
        b = BoundingBox(0, 0, 1, 1)
        assert box_center(b) == (0.5, 0.5)
        assert box_area(b) == 1.0

    def test_degenerate_width(self):
        assert box_area(BoundingBox(0.2, 0.2, 0.2, 0.8)) == 0.0

    def test_quantized_area_stays_close(self):
        # grid sweep over boxes with both sides >= 0.1
        steps = [i / 50 for i in range(51)]
        worst = 0.0
        for x0 in steps:
            for x1 in steps:
                if x1 - x0 < 0.1:
                    continue
                b = BoundingBox(x0, 0.2, x1, 0.85)
                worst = max(worst, abs(box_area(quantize_box(b)) - box_area(b)))
        assert worst <= 0.1 + 1e-12

    def test_center_point_layout(self):
        scene = SceneSpec(
            index=1,
            description="d",
            entities=[static_track("e", "e", BoundingBox(0.2, 0.2, 0.6, 0.8))],
        )
        dense = dense_scene_layout(scene, 16)
        centered = to_center_point_layout(dense)
        fb = centered.frames[0][0]
        assert (fb.box.x0, fb.box.y0) == (fb.box.x1, fb.box.y1) == (0.4, 0.5)
        assert box_area(fb.box) == 0.0
        again = to_center_point_layout(centered)
        assert again.frames[0][0].box == fb.box


class TestFourierFeatures:
    def test_zero_box(self):
        f = fourier_features(BoundingBox(0, 0, 0, 0), bands=2)
        assert len(f) == 16
        assert f[0::2] == [0.0] * 8  # sines
        assert f[1::2] == [1.0] * 8  # cosines

    def test_unit_box_single_band(self):
        f = fourier_features(BoundingBox(1, 1, 1, 1), bands=1)
        assert len(f) == 8
        for s, c in zip(f[0::2], f[1::2]):
            assert abs(s) < 1e-12  # sin(pi)
            assert c == pytest.approx(-1.0)

    def test_lipschitz_under_quantization(self):
        rng = np.random.default_rng(11)
        L = 4
        const = 2 ** (L - 1) * math.pi
        for _ in range(200):
            x = np.sort(rng.uniform(0, 1, 2))
            y = np.sort(rng.uniform(0, 1, 2))
            b = BoundingBox(x[0], y[0], x[1], y[1])
            q = quantize_box(b)
            err = max(abs(a - c) for a, c in zip(b.as_tuple(), q.as_tuple()))
            fb = np.array(fourier_features(b, L))
            fq = np.array(fourier_features(q, L))
            assert np.max(np.abs(fb - fq)) <= const * err + 1e-12

    def test_injective_on_quantization_grid(self):
        grid = [round(i * 0.05, 12) for i in range(21)]
        seen = {}
        for x0 in grid:
            for x1 in grid:
                if x0 > x1:
                    continue
                key = tuple(fourier_features(BoundingBox(x0, 0.0, x1, 0.0), bands=1))
                assert key not in seen, (x0, x1, seen[key])
                seen[key] = (x0, x1)


def test_dense_layout_doc_round_trip():
    scene = SceneSpec(
        index=1,
        description="d",
        entities=[
            linear_track("a", "pear", BoundingBox(0.0, 0.4, 0.2, 0.6), BoundingBox(0.8, 0.4, 1.0, 0.6)),
            static_track("b", "table", BoundingBox(0.0, 0.7, 1.0, 1.0)),
        ],
    )
    dense = dense_scene_layout(scene, 16)
    assert dense.frame_count == 16
    assert all(len(frame) == 2 for frame in dense.frames)
    doc = dense_layouts_to_doc([dense])
    back = dense_layouts_from_doc(doc)
    assert len(back) == 1 and back[0].frame_count == 16
    assert back[0].frames[3][0].box == dense.frames[3][0].box
    assert isinstance(back[0], DenseLayout)

import numpy as np

from ovc.render import (CSV_HEADER, PALETTE, format_metrics_rows, render_frame,
                        render_trajectories, write_metrics_csv)
from ovc.synthetic import Metrics, crossing, gt_tracks, render_scenario


def pixels(ppm: bytes, canvas):
    h, w = canvas
    header = f"P6\n{w} {h}\n255\n".encode()
    assert ppm.startswith(header)
    return np.frombuffer(ppm[len(header):], dtype=np.uint8).reshape(h, w, 3)


def test_empty_frame_is_black():
    assert render_frame({}, (2, 3)) == b"P6\n3 2\n255\n" + bytes(18)


def test_full_mask_gets_palette_color():
    px = pixels(render_frame({0: np.ones((2, 2))}, (2, 2)), (2, 2))
    assert (px == PALETTE[0]).all()
    px = pixels(render_frame({13: np.ones((2, 2))}, (2, 2)), (2, 2))
    assert (px == PALETTE[1]).all()


def test_overlap_lowest_id_wins():
    a = np.zeros((2, 2))
    a[0] = 1
    px = pixels(render_frame({5: np.ones((2, 2)), 2: a}, (2, 2)), (2, 2))
    assert (px[0] == PALETTE[2]).all() and (px[1] == PALETTE[5]).all()


def test_trajectories_svg():
    r = render_scenario(crossing(0, full_occlusion=False), with_maps=False)
    svg = render_trajectories(gt_tracks(r.clips), r.scenario.canvas)
    assert svg.count("<polyline") == 2
    for line in svg.splitlines():
        if "<polyline" in line:
            points = line.split('points="')[1].split('"')[0].split()
            assert len(points) == 13
    # first centroid of object 0: 8x8 square centred on (16, 8)
    assert 'points="8.00,16.00 ' in svg


def test_metrics_csv(tmp_path):
    assert format_metrics_rows([]) == CSV_HEADER
    row = format_metrics_rows([Metrics("crossing", 3, 0, 1.0, 1.0)])
    assert row.splitlines()[1] == "crossing,3,0,1.0,1.0"
    write_metrics_csv([Metrics("a", 1, 0, 1.0, 0.5), Metrics("a", 2, 1, 0.75, 0.25)],
                      tmp_path / "m.csv")
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 3


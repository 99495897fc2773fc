import numpy as np
import pytest

from ltcaniso.images import (Image, colormap, image_metrics,
                             mean_abs_rel_error, read_pfm, write_pfm,
                             write_ppm)


def gradient_image(w=20, h=12):
    g = np.linspace(0, 1, w, dtype=np.float32)
    px = np.broadcast_to(g[None, :, None], (h, w, 3)).copy()
    return Image(pixels=px)


class TestImageType:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            Image(pixels=-np.ones((4, 4, 3), dtype=np.float32))

    def test_rejects_nan(self):
        px = np.zeros((4, 4, 3), dtype=np.float32)
        px[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(pixels=px)


class TestPfm:
    def test_roundtrip_bitwise(self, tmp_path):
        img = gradient_image()
        path = str(tmp_path / "x.pfm")
        write_pfm(img, path)
        back = read_pfm(path)
        assert (back.pixels == img.pixels).all()


class TestPpm:
    def test_header_and_gamma(self, tmp_path):
        img = gradient_image()
        path = str(tmp_path / "x.ppm")
        write_ppm(img, path)
        raw = open(path, "rb").read()
        assert raw.startswith(b"P6\n20 12\n255\n")
        body = np.frombuffer(raw.split(b"255\n", 1)[1], dtype=np.uint8)
        assert body.size == 20 * 12 * 3
        # Mid-gray 0.5 linear encodes to round(0.5^(1/2.2) * 255).
        mid = img.pixels[0, :, 0]
        k = int(np.argmin(np.abs(mid - 0.5)))
        expect = int(mid[k] ** (1 / 2.2) * 255 + 0.5)
        assert body.reshape(12, 20, 3)[0, k, 0] == expect


class TestMetrics:
    def test_identical_zero(self):
        img = gradient_image()
        m = image_metrics(img, img)
        assert m["mae"] == 0.0 and m["rmse"] == 0.0 and m["max_err"] == 0.0

    def test_uniform_offset(self):
        img = gradient_image()
        shifted = Image(pixels=img.pixels + 0.1)
        m = image_metrics(img, shifted)
        assert abs(m["mae"] - 0.1) < 1e-6
        assert abs(m["rmse"] - 0.1) < 1e-6

    def test_dimension_mismatch(self):
        a = gradient_image(10, 10)
        b = gradient_image(11, 10)
        with pytest.raises(ValueError):
            image_metrics(a, b)

    def test_mare_relative(self):
        ref = Image(pixels=np.full((4, 4, 3), 0.5, dtype=np.float32))
        test = Image(pixels=np.full((4, 4, 3), 0.55, dtype=np.float32))
        assert abs(mean_abs_rel_error(test, ref) - 0.1) < 1e-6


class TestColormap:
    def test_range_and_shape(self):
        v = np.linspace(0, 2.0, 32)
        rgb = colormap(v, vmax=1.0)
        assert rgb.shape == (32, 3)
        assert rgb.min() >= 0.0 and rgb.max() <= 1.0
        # saturates at vmax
        assert (rgb[-1] == rgb[16]).all()

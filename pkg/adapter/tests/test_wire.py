import base64

import numpy as np
import pytest

from semnav_adapter import wire

from conftest import make_image


def test_ppm_round_trip():
    img = make_image(seed=5, h=17, w=23)
    out = wire.ppm_to_rgb(wire.rgb_to_ppm(img))
    assert out.shape == (17, 23, 3)
    assert np.array_equal(out, img)


def test_ppm_header_with_comment_parses():
    img = make_image(seed=1, h=2, w=2)
    data = b"P6\n# a comment\n2 2\n255\n" + img.tobytes()
    assert np.array_equal(wire.ppm_to_rgb(data), img)


@pytest.mark.parametrize(
    "data",
    [
        b"P5\n2 2\n255\n" + b"\x00" * 12,
        b"P6\n2 2\n65535\n" + b"\x00" * 24,
        b"P6\n2 2\n255\n" + b"\x00" * 7,
        b"P6\nx 2\n255\n" + b"\x00" * 12,
        b"not a raster at all",
    ],
)
def test_bad_rasters_rejected(data):
    with pytest.raises(wire.DecodeError):
        wire.ppm_to_rgb(data)


def test_decode_image_b64_bad_base64():
    with pytest.raises(wire.DecodeError):
        wire.decode_image_b64("!!!not-base64!!!", 1 << 20)


def test_decode_image_b64_size_cap():
    img = make_image(seed=2, h=8, w=8)
    text = base64.b64encode(wire.rgb_to_ppm(img)).decode()
    with pytest.raises(wire.PayloadTooLarge):
        wire.decode_image_b64(text, 16)
    assert wire.decode_image_b64(text, 1 << 20).shape == (8, 8, 3)


def test_floats_b64_round_trip_is_bit_exact():
    rng = np.random.default_rng(9)
    values = rng.standard_normal(100)
    out = wire.floats_from_b64(wire.floats_to_b64(values))
    assert out.tobytes() == values.astype("<f8").tobytes()


def test_canonical_json_is_sorted_and_compact():
    b = wire.canonical_json_bytes({"b": 1, "a": [1.5, None, "x"]})
    assert b == b'{"a":[1.5,null,"x"],"b":1}'


def test_request_key_sensitive_to_endpoint_and_body():
    body = {"schema_version": 1, "frame_id": 7, "image_b64": "aGk="}
    k1 = wire.request_key("/embed", body)
    k2 = wire.request_key("/segment", body)
    k3 = wire.request_key("/embed", {**body, "frame_id": 8})
    assert len({k1, k2, k3}) == 3
    assert k1 == wire.request_key("/embed", dict(reversed(list(body.items()))))


def test_background_extension_skips_presents():
    assert wire.extend_with_backgrounds(("grass",)) == (
        "grass",
        "background",
        "sky",
        "nothing",
    )
    assert wire.extend_with_backgrounds(("sky", "grass")) == (
        "sky",
        "grass",
        "background",
        "nothing",
    )

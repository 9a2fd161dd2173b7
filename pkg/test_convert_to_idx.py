import numpy as np

from data import read_idx
from scripts import convert_to_idx


def test_colour_images_become_grayscale_28x28():
    images = np.full((2, 32, 32, 3), 200, dtype=np.uint8)
    converted = convert_to_idx.to_grayscale_28(images)
    assert converted.shape == (2, 28, 28)
    assert converted.dtype == np.uint8
    assert np.all(converted == 200)


def test_channels_first_layout():
    images = np.zeros((1, 3, 28, 28), dtype=np.uint8)
    images[:, 1] = 100
    converted = convert_to_idx.to_grayscale_28(images, channels_first=True)
    assert np.all(converted == round(100 * 0.587))


def test_convert_writes_four_idx_files(tmp_path):
    archive = tmp_path / "images.npz"
    np.savez(
        archive,
        x_train=np.zeros((3, 28, 28), dtype=np.uint8),
        y_train=np.array([[0], [1], [1]], dtype=np.uint8),
        x_test=np.zeros((2, 28, 28), dtype=np.uint8),
        y_test=np.array([1, 0], dtype=np.uint8),
    )
    written = convert_to_idx.convert(archive, tmp_path / "idx")
    assert [path.name for path in written] == list(convert_to_idx.ARCHIVE_KEYS.values())
    np.testing.assert_array_equal(read_idx(written[1]), [0, 1, 1])


def test_main_reports_missing_archive(tmp_path, capsys):
    assert convert_to_idx.main([str(tmp_path / "absent.npz")]) == 1
    assert "Archive not found" in capsys.readouterr().out

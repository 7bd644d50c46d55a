"""Regenerate the standard test images in data/.

lena512.pgm
    ``scipy/misc/lena.dat`` from the scipy 0.16.1 source distribution
    (512x512, 8-bit grey). Pass the path to that file as the first argument.
cameraman256.pgm
    ``skimage.data.camera()`` (512x512, 8-bit) reduced to 256x256 by 2x2
    block averaging, rounded to 8 bits.
"""

import pathlib
import pickle
import sys

import numpy as np

from speckletv.image_core import save_image

DATA = pathlib.Path(__file__).resolve().parents[1] / "data"


def main(argv):
    if len(argv) > 1:
        with open(argv[1], "rb") as fh:
            lena = np.asarray(pickle.load(fh, encoding="latin1"), dtype=np.float64)
        save_image(lena, DATA / "lena512.pgm")

    from skimage.data import camera

    cam = camera().astype(np.float64)
    cam256 = cam.reshape(256, 2, 256, 2).mean(axis=(1, 3))
    save_image(cam256, DATA / "cameraman256.pgm")


if __name__ == "__main__":
    main(sys.argv)

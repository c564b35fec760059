"""Regenerates the frozen fixtures used by the C++ tests."""
import json

import numpy as np
import torch
from PIL import Image


def lanczos_oracle():
    h, w = 6, 9
    a = np.zeros((h, w, 3), np.uint8)
    for y in range(h):
        for x in range(w):
            a[y, x] = [(x * 37 + y * 11) % 256, (x * x * 5 + y * 23) % 256, (255 - x * 19 - y * 29) % 256]
    im = Image.fromarray(a)
    out = {"width": w, "height": h, "source": a.reshape(-1).tolist(), "resized": []}
    for width, height in [(4, 3), (13, 10), (9, 4)]:
        r = np.asarray(im.resize((width, height), Image.LANCZOS))
        out["resized"].append({"width": width, "height": height, "pixels": r.reshape(-1).tolist()})
    with open("lanczos_oracle.json", "w") as f:
        json.dump(out, f)


class TinyExtractor(torch.nn.Module):
    def forward(self, x):
        return torch.nn.functional.adaptive_avg_pool2d(x, 2).flatten(1)


def tiny_extractor():
    torch.jit.script(TinyExtractor()).save("tiny_extractor.pt")


def ssim_oracle():
    from skimage.metrics import structural_similarity

    rng = np.random.default_rng(7)
    x = rng.integers(0, 256, (20, 23, 3), dtype=np.uint8)
    noise = rng.integers(-40, 41, x.shape)
    y = np.clip(x.astype(int) + noise, 0, 255).astype(np.uint8)
    value = structural_similarity(x.astype(np.float64), y.astype(np.float64), channel_axis=-1,
                                  gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                  data_range=255)
    out = {"width": 23, "height": 20, "x": x.reshape(-1).tolist(), "y": y.reshape(-1).tolist(),
           "ssim": float(value)}
    with open("ssim_oracle.json", "w") as f:
        json.dump(out, f)


def jpeg_fixture():
    a = np.zeros((16, 16, 3), np.uint8)
    a[...] = (200, 100, 50)
    Image.fromarray(a).save("solid.jpg", quality=95)


if __name__ == "__main__":
    lanczos_oracle()
    tiny_extractor()
    ssim_oracle()
    jpeg_fixture()

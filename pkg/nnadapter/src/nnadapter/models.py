"""Width-reduced network definitions and the model artifact format.

Both nets keep the published training recipes but shrink the channel
counts to something a single core trains in seconds; widths travel inside
the saved artifact so inference rebuilds the exact shape.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

CLASSIFIER_WIDTHS = (8, 16, 32)
SEGMENTER_WIDTHS = (4, 8, 16, 32)


class _Block(nn.Module):
    """3x3-3x3 residual block with a projection skip on shape change."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False),
                                      nn.BatchNorm2d(cout))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.skip(x))


class ResidualClassifier(nn.Module):
    """Residual image classifier, global-average-pooled head.

    The stem downsamples by 8 before the first block so 512 px inputs stay
    cheap; the final feature map (input/32) is the activation-map source.
    """

    def __init__(self, widths=CLASSIFIER_WIDTHS, num_classes=2):
        super().__init__()
        w1, w2, w3 = widths
        self.stem = nn.Sequential(
            nn.Conv2d(1, w1, 7, stride=4, padding=3, bias=False),
            nn.BatchNorm2d(w1), nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1))
        self.layer1 = nn.Sequential(_Block(w1, w1), _Block(w1, w1))
        self.layer2 = nn.Sequential(_Block(w1, w2, 2), _Block(w2, w2))
        self.layer3 = nn.Sequential(_Block(w2, w3, 2), _Block(w3, w3))
        self.fc = nn.Linear(w3, num_classes)

    def features(self, x):
        return self.layer3(self.layer2(self.layer1(self.stem(x))))

    def forward(self, x):
        return self.fc(self.features(x).mean(dim=(2, 3)))


class _DoubleConv(nn.Sequential):
    # GroupNorm: the segmentation recipe runs at batch size 2, where batch
    # statistics would swing with the pair drawn
    def __init__(self, cin, cout):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1, bias=False),
            nn.GroupNorm(min(4, cout), cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False),
            nn.GroupNorm(min(4, cout), cout), nn.ReLU(inplace=True))


class _Gate(nn.Module):
    """Additive attention on a skip path, gated by the coarser decoder level."""

    def __init__(self, ch, ch_mid):
        super().__init__()
        self.wx = nn.Conv2d(ch, ch_mid, 1, bias=False)
        self.wg = nn.Conv2d(ch, ch_mid, 1, bias=False)
        self.psi = nn.Conv2d(ch_mid, 1, 1)

    def forward(self, x, g):
        a = torch.sigmoid(self.psi(F.relu(self.wx(x) + self.wg(g))))
        return x * a


class AttentionUNet(nn.Module):
    """Three-level U-Net with attention-gated skips, two-class logits out.

    ``logit_gain`` is a fixed output temperature sized to the step budget:
    the optimizer moves each weight only a few times 1e-2 over a desk-scale
    schedule, so the zero-initialized head needs the gain to reach
    confident logits at all, while starting from exact p=0.5 keeps early
    cross-entropy out of the saturated all-background basin a confident
    random init can fall into.
    """

    def __init__(self, widths=SEGMENTER_WIDTHS, num_classes=2,
                 logit_gain=64.0):
        super().__init__()
        self.logit_gain = float(logit_gain)
        w1, w2, w3, w4 = widths
        self.pool = nn.MaxPool2d(2)
        self.enc1 = _DoubleConv(1, w1)
        self.enc2 = _DoubleConv(w1, w2)
        self.enc3 = _DoubleConv(w2, w3)
        self.mid = _DoubleConv(w3, w4)
        self.up3 = nn.ConvTranspose2d(w4, w3, 2, stride=2)
        self.gate3 = _Gate(w3, max(w3 // 2, 1))
        self.dec3 = _DoubleConv(2 * w3, w3)
        self.up2 = nn.ConvTranspose2d(w3, w2, 2, stride=2)
        self.gate2 = _Gate(w2, max(w2 // 2, 1))
        self.dec2 = _DoubleConv(2 * w2, w2)
        self.up1 = nn.ConvTranspose2d(w2, w1, 2, stride=2)
        self.gate1 = _Gate(w1, max(w1 // 2, 1))
        self.dec1 = _DoubleConv(2 * w1, w1)
        self.head = nn.Conv2d(w1, num_classes, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        g3 = self.up3(self.mid(self.pool(e3)))
        d3 = self.dec3(torch.cat([self.gate3(e3, g3), g3], dim=1))
        g2 = self.up2(d3)
        d2 = self.dec2(torch.cat([self.gate2(e2, g2), g2], dim=1))
        g1 = self.up1(d2)
        d1 = self.dec1(torch.cat([self.gate1(e1, g1), g1], dim=1))
        return self.logit_gain * self.head(d1)


def build_model(kind: str, widths=None) -> nn.Module:
    if kind == "classifier":
        return ResidualClassifier(tuple(widths or CLASSIFIER_WIDTHS))
    if kind == "segmenter":
        return AttentionUNet(tuple(widths or SEGMENTER_WIDTHS))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, kind: str, model: nn.Module, widths, input_size: int,
               view_angle_deg: float):
    torch.save({"kind": kind, "widths": tuple(widths),
                "input_size": int(input_size),
                "view_angle_deg": float(view_angle_deg),
                "state_dict": model.state_dict()}, path)


def load_model(path):
    """-> (model in eval mode, metadata dict)."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    try:
        kind = blob["kind"]
        model = build_model(kind, blob["widths"])
        model.load_state_dict(blob["state_dict"])
    except (KeyError, TypeError, RuntimeError) as e:
        raise ValueError(f"{path}: not a usable model artifact: {e}") from None
    model.eval()
    meta = {k: blob[k] for k in ("kind", "widths", "input_size",
                                 "view_angle_deg")}
    return model, meta


def find_artifacts(source, angles, prefix: str) -> dict:
    """Resolve per-angle artifact paths.

    ``source`` is either a mapping angle -> path or a directory holding
    ``<prefix>_<tag>.pt`` files; every requested angle must resolve.
    """
    if isinstance(source, (str, Path)):
        d = Path(source)
        found = {}
        for f in sorted(d.glob(f"{prefix}_*.pt")):
            try:
                found[float(f.stem[len(prefix) + 1:])] = f
            except ValueError:
                continue
        source = found
    else:
        source = {float(a): Path(p) for a, p in source.items()}
    missing = [a for a in angles if float(a) not in source]
    if missing:
        raise ValueError("no trained model for view angle(s) "
                         + ", ".join(f"{a:g}" for a in missing))
    return {float(a): source[float(a)] for a in angles}

"""Desk-scale classifier zoo shared by the surrogate and the attacker."""
from __future__ import annotations

import torch
from torch import nn

from segue.errors import ArgumentError


def _conv_bn(cin, cout, stride=1, groups=1, kernel=3):
    return [nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, groups=groups, bias=False),
            nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]


class SmallCNN(nn.Module):
    """Six 3x3 conv layers in three stages, global average pooling, linear head."""

    def __init__(self, num_classes=10, in_channels=3, widths=(16, 32, 64)):
        super().__init__()
        a, b, c = widths
        self.features = nn.Sequential(
            *_conv_bn(in_channels, a), *_conv_bn(a, a), nn.MaxPool2d(2),
            *_conv_bn(a, b), *_conv_bn(b, b), nn.MaxPool2d(2),
            *_conv_bn(b, c), *_conv_bn(c, c),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.head = nn.Linear(c, num_classes)
        self.feature_dim = c

    def embed(self, x):
        return self.features(x)

    def forward(self, x):
        return self.head(self.features(x))


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout),
        )
        self.skip = nn.Identity()
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        return torch.relu(self.body(x) + self.skip(x))


class SmallResNet(nn.Module):
    def __init__(self, num_classes=10, in_channels=3, widths=(16, 32, 64)):
        super().__init__()
        a, b, c = widths
        self.stem = nn.Sequential(*_conv_bn(in_channels, a))
        self.layers = nn.Sequential(BasicBlock(a, a, 1), BasicBlock(a, b, 2), BasicBlock(b, c, 2))
        self.pool = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.head = nn.Linear(c, num_classes)
        self.feature_dim = c

    def embed(self, x):
        return self.pool(self.layers(self.stem(x)))

    def forward(self, x):
        return self.head(self.embed(x))


class DepthwiseNet(nn.Module):
    """MobileNet-style stack of depthwise-separable convolutions."""

    def __init__(self, num_classes=10, in_channels=3, widths=(16, 32, 64)):
        super().__init__()
        a, b, c = widths
        layers = _conv_bn(in_channels, a)
        for cin, cout, stride in ((a, b, 1), (b, b, 2), (b, c, 1), (c, c, 2), (c, c, 1)):
            layers += _conv_bn(cin, cin, stride=stride, groups=cin) + _conv_bn(cin, cout, kernel=1)
        self.features = nn.Sequential(*layers, nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.head = nn.Linear(c, num_classes)
        self.feature_dim = c

    def embed(self, x):
        return self.features(x)

    def forward(self, x):
        return self.head(self.features(x))


class LinearModel(nn.Module):
    """Flatten + affine map; handy for closed-form checks."""

    def __init__(self, num_classes=10, in_channels=3, image_size=(32, 32)):
        super().__init__()
        self.flat = nn.Flatten()
        self.head = nn.Linear(in_channels * image_size[0] * image_size[1], num_classes)

    def forward(self, x):
        return self.head(self.flat(x))


ARCHITECTURES = {"cnn": SmallCNN, "resnet": SmallResNet, "dwsep": DepthwiseNet}


def build_classifier(arch: str, num_classes: int, in_channels: int = 3, widths=(16, 32, 64)) -> nn.Module:
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ArgumentError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(num_classes=num_classes, in_channels=in_channels, widths=tuple(widths))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

# Copyright © 2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.

import sys
from pathlib import Path

from setuptools import setup

package_dir = Path(__file__).parent / "mlx_popcast"
with open("requirements.txt") as fid:
    requirements = [l.strip() for l in fid.readlines() if l.strip()]

sys.path.append(str(package_dir))
from _version import __version__

setup(
    name="mlx-popcast",
    version=__version__,
    description="Micro-video popularity prediction with evidence cards and online adapters in MLX",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    readme="README.md",
    author="mlx-popcast contributors",
    license="MIT",
    install_requires=requirements,
    packages=["mlx_popcast", "mlx_popcast.models", "mlx_popcast.tuner"],
    package_data={"mlx_popcast": ["examples/*.yaml"]},
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "mlx_popcast = mlx_popcast.cli:main",
        ]
    },
)

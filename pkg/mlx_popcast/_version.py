# Copyright © 2025 mlx-popcast contributors.

__version__ = "0.1.0"

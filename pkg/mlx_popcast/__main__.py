# Copyright © 2025 mlx-popcast contributors.

from .cli import main

if __name__ == "__main__":
    main()

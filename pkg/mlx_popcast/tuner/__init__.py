from .lora import LoRALinear
from .utils import build_schedule, fuse_adapters

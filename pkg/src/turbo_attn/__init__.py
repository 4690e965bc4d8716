"""turbo-attn - quantized tiled attention with progressive KV-cache compression."""

from turbo_attn.cli import main

__all__ = ["main"]

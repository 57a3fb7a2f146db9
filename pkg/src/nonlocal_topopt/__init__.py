"""Nonlocal diffusion compliance minimization."""

__all__: list[str] = []

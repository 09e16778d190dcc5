from ._pipeline import atomic_output, register_pipeline_commands

__all__ = ["atomic_output", "register_pipeline_commands"]

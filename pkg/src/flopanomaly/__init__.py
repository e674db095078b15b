"""Find instances where the minimum-FLOP algorithm for a dense linear algebra
expression is not the fastest one."""

__version__ = "0.1.0"

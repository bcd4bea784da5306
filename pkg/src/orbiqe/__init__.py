"""Classical and quantum ergodicity numerics on compact 2-orbifolds."""

__version__ = "0.1.0"

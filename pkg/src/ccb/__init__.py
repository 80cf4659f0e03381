"""Financial indicator benchmark tooling (CCB: complexity-stratified queries) and a dual-phase program-of-thought pipeline."""

__version__ = "0.1.0"

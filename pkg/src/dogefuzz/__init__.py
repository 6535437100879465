"""Grey-box fuzzer for EVM smart contracts.

Packages a small Istanbul-era bytecode interpreter with execution
instrumentation, CFG recovery with critical-instruction distance maps, an ABI
codec and typed input generator, three fuzzing strategies (black-box,
grey-box, directed grey-box), transaction-level bug oracles, and a benchmark
harness with a CLI.
"""

from __future__ import annotations

__version__ = "0.1.0"

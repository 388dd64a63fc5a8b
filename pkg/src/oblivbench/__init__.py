"""Data-oblivious primitives, algorithms and applications with an access-trace checker.

Layers, bottom up: ``trace`` (instrumented buffers and access traces),
``oprim`` (branch-free select/compare and linear-scan array access),
``oram`` (Path ORAM), ``oalg`` (bitonic sort, edit distance,
Floyd-Warshall), ``blocks`` (1 KiB block store, block sort, buffer
manager), ``apps`` (WordCount, KMeans, MapReduce runner) and ``bench``
(scenarios, invariance checker, CSV).
"""

__version__ = "0.1.0"

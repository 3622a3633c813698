# Copyright 2020 reflected_coherence developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Mapping, Optional, Sequence

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

THREADS_ENV_VAR = "REFLECTED_COHERENCE_THREADS"


def thread_count(workers: Optional[int] = None) -> int:
    """
    Return the number of worker threads to use.

    An explicit ``workers`` wins; otherwise the ``REFLECTED_COHERENCE_THREADS``
    environment variable is consulted, and the default is a single thread.
    """
    if workers is not None:
        return max(1, int(workers))
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(
            "Ignoring non-integer {}={!r}, using one thread".format(THREADS_ENV_VAR, raw)
        )
        return 1


def parallel_map(func: Callable, items: Sequence, workers: Optional[int] = None) -> List:
    """Apply ``func`` to every item, in order, using a thread pool when more than one worker is allowed."""
    n = thread_count(workers)
    if n == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def table(
    headers: Iterable[str],
    rows: Iterable,
    fill: str = "",
    header_fmt: Optional[Callable[[str], str]] = None,
    row_fmt: Optional[Callable[[str], str]] = None,
    alignment: Optional[Mapping[str, str]] = None,
) -> str:
    """
    Return a string containing a simple table created from headers and rows of entries.

    Parameters
    ----------
    headers
        The column headers for the table.
    rows
        The entries for each row.
        A sequence-type row is printed in order;
        a mapping-type row is looked up by header and may have missing values.
    fill
        The string to print in place of a missing value in a mapping-type row.
    header_fmt
        Called on the finished header line (for example, to make it bold).
    row_fmt
        Called on each finished row line.
    alignment
        A mapping of header to ``"ljust"``, ``"rjust"`` or ``"center"``.
        Columns not mentioned are centered.

    Returns
    -------
    table :
        A string containing the table.
    """
    headers = [str(h) for h in headers]
    alignment = alignment or {}

    cells = []
    for row in rows:
        if isinstance(row, Mapping):
            cells.append([str(row.get(h, fill)) for h in headers])
        else:
            cells.append([str(entry) for entry in row])

    widths = [
        max([len(h)] + [len(line[idx]) for line in cells]) for idx, h in enumerate(headers)
    ]
    justify = [alignment.get(h, "center") for h in headers]

    def render(entries):
        return "  ".join(
            getattr(entry, how)(width) for entry, width, how in zip(entries, widths, justify)
        ).rstrip()

    lines = [(header_fmt or str)(render(headers))]
    lines.extend((row_fmt or str)(render(line)) for line in cells)

    return rstr("\n".join(lines))


class rstr(str):
    """A string whose ``__repr__`` is its ``__str__``, so tables display cleanly in notebooks."""

    def __repr__(self):
        return self.__str__()


def format_complex(z: complex, digits: int = 5) -> str:
    """Format a complex number like ``-0.03534-0.35003i``, dropping a negligible imaginary part."""
    z = complex(z)
    if abs(z.imag) <= 10 ** (-digits - 1) * max(1.0, abs(z)):
        return "{:.{d}f}".format(z.real, d=digits)
    return "{:.{d}f}{:+.{d}f}i".format(z.real, z.imag, d=digits)


def num_bytes_to_str(num_bytes: float) -> str:
    """Return a number of bytes as a human-readable string."""
    for unit in ("B", "KB", "MB", "GB"):
        if num_bytes < 1024:
            return "{:.1f} {}".format(num_bytes, unit)
        num_bytes /= 1024
    return "{:.1f} TB".format(num_bytes)

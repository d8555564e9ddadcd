#!/usr/bin/env python3
# Copyright 2026 The ego Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates include/ego/detail/punct_table.hpp from Python's unicodedata.

Emits the closed code point ranges of Unicode general category P
(Pc, Pd, Ps, Pe, Pi, Pf, Po).
"""

import sys
import unicodedata


def ranges():
    out = []
    start = None
    prev = None
    for cp in range(0x110000):
        is_p = unicodedata.category(chr(cp)).startswith("P")
        if is_p and start is None:
            start = cp
        if not is_p and start is not None:
            out.append((start, prev))
            start = None
        prev = cp
    if start is not None:
        out.append((start, prev))
    return out


def main():
    rs = ranges()
    lines = [
        "// Copyright 2026 The ego Authors",
        "// SPDX-License-Identifier: Apache-2.0",
        "//",
        "// Generated by tools/gen_punct_table.py (Unicode %s). Do not edit."
        % unicodedata.unidata_version,
        "",
        "#pragma once",
        "",
        "#include <array>",
        "#include <cstdint>",
        "",
        "namespace ego::detail {",
        "",
        "struct CodePointRange {",
        "  std::uint32_t first;",
        "  std::uint32_t last;",
        "};",
        "",
        "inline constexpr std::array<CodePointRange, %d> kPunctuationRanges{{" % len(rs),
    ]
    for a, b in rs:
        lines.append("    {0x%04X, 0x%04X}," % (a, b))
    lines += ["}};", "", "}  // namespace ego::detail", ""]
    sys.stdout.write("\n".join(lines))


if __name__ == "__main__":
    main()

#pragma once

#include <string>

namespace qloss {

/// Rounds to 9 significant digits. Report writers pass every double through
/// this so JSON output is byte-stable across runs.
double round_sig9(double v);

/// `%.9g` formatting, used for CSV cells.
std::string fmt9(double v);

/// Shortest decimal text that parses back to exactly `v` at the given
/// number of significant digits (used by table serialization).
std::string fmt_sig(double v, int digits);

}  // namespace qloss

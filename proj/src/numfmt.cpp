#include "qloss/numfmt.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace qloss {

double round_sig9(double v) {
    if (!std::isfinite(v) || v == 0.0) return v;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::strtod(buf, nullptr);
}

std::string fmt9(double v) { return fmt_sig(v, 9); }

std::string fmt_sig(double v, int digits) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

}  // namespace qloss

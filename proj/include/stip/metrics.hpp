// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace stip::harness {

// Binary confusion counts and the derived scores. Zero-denominator cases
// report 0 and raise the corresponding flag instead of NaN.
struct Metrics {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;

    static Metrics from_counts(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn);
    std::string to_csv_row() const;
};

}  // namespace stip::harness

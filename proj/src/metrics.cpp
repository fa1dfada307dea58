// SPDX-License-Identifier: Apache-2.0
#include "stip/metrics.hpp"

#include <sstream>

#include "stip/common.hpp"

namespace stip::harness {

Metrics Metrics::from_counts(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn) {
    if (tp < 0 || tn < 0 || fp < 0 || fn < 0) throw ConfigError("negative confusion count");
    if (tp + tn + fp + fn == 0) throw ConfigError("empty confusion matrix");
    Metrics m;
    m.tp = tp;
    m.tn = tn;
    m.fp = fp;
    m.fn = fn;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn);
    if (tp + fp > 0)
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
        m.precision_undefined = true;
    if (tp + fn > 0)
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
        m.recall_undefined = true;
    if (m.precision + m.recall > 0)
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else
        m.f1_undefined = true;
    return m;
}

std::string Metrics::to_csv_row() const {
    std::ostringstream os;
    os << tp << "," << tn << "," << fp << "," << fn << "," << format_float(accuracy) << ","
       << format_float(precision) << "," << format_float(recall) << "," << format_float(f1);
    return os.str();
}

}  // namespace stip::harness

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stip/preprocess.hpp"

namespace stip::harness {

// Template-generated labeled contracts: vulnerable samples embed the class's
// trigger pattern, clean samples avoid its tokens entirely, so the corpus is
// linearly separable at the token level by construction.
struct SynthSpec {
    std::string cls;
    std::int64_t count = 0;  // total per class, split 50/50 vulnerable/clean
};

struct SynthResult {
    std::vector<text::RawContract> contracts;
};

SynthResult make_synthetic_corpus(const std::vector<SynthSpec>& specs, std::uint64_t seed);

// Writes the .sol files plus a combined labels.csv into dir.
void write_synthetic_corpus(const SynthResult& corpus, const std::string& dir);

}  // namespace stip::harness

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace stip::harness {

// Every tunable of the pipeline with its default. A JSON config file may
// override any subset; unknown keys are rejected.
struct PipelineConfig {
    // preprocess
    std::int64_t min_count = 2;
    bool span_only = false;  // drop non-annotated tokens instead of keeping them
    std::string patterns_path;

    // embedding / assembly
    std::int64_t embed_dim = 300;      // C
    std::int64_t seq_tokens = 256;     // N
    std::int64_t repeat_factor = 2;    // K
    std::int64_t cbow_window = 5;
    std::int64_t cbow_negatives = 5;
    std::int64_t cbow_epochs = 5;
    double cbow_lr = 0.025;
    bool pe_after_repeat = false;
    std::string repeat_mode = "tile";  // or "element"

    // fusion module
    std::int64_t fusion_heads = 4;
    std::int64_t fusion_groups = 4;
    std::int64_t memory_slots = 64;
    std::int64_t fusion_stages = 2;
    std::int64_t mb_expansion = 4;

    // student
    std::int64_t student_hidden = 64;
    std::int64_t psa_groups = 4;

    // supervised training (teacher and from-scratch student)
    double train_lr = 1e-3;
    std::int64_t train_batch = 64;
    std::int64_t train_epochs = 20;

    // data-free distillation
    std::string synthesis_space = "token-mixture";  // or "direct"
    double logit_sigma = 3.0;        // token-mixture logit noise scale
    double adversarial_weight = 0.0; // student-aware synthesis weight
    bool noise_prior_from_embedding = true;  // derive mu/sigma from embedding + PE (direct mode)
    double noise_mu = 0.0;                   // manual prior when the flag is off
    double noise_sigma = 1.0;
    double synth_eta = 0.05;
    std::int64_t synth_steps = 200;
    double kd_temperature = 4.0;
    double kd_alpha = 0.2;
    std::int64_t distill_batch = 64;
    std::int64_t distill_steps = 60;
    std::int64_t refresh_every = 10;
    double distill_lr = 1e-3;
    double distill_momentum = 0.9;

    // transfer
    std::int64_t transfer_epochs = 30;

    // harness
    std::int64_t repeats = 5;
    double split_ratio = 0.8;
    std::string precision = "f32";  // or "f64"

    static PipelineConfig from_json_file(const std::string& path);
    void apply_json(const std::string& json_text);
    std::string to_json() const;
    void validate() const;
};

}  // namespace stip::harness
